"""Модель Select-And-Rank: необязательный селектор и ранкер.

Без селектора ранкер видит начало документа (базовая модель с
усечением). Один и тот же путь вывода используется при валидации,
переранжировании, объяснениях и анализе пропущенных токенов."""
import math
import zlib

import numpy as np

import config
from domain import autodiff as ad
from domain.autodiff import ParameterStore, Tensor
from domain.models import (Document, ExplainedSentence, Explanation,
                           ModelSpec, Query, RankerInput, SentenceScores,
                           Summary, TrainConfig, Vocabulary)
from domain.ranker import (TransformerRanker, assemble_input,
                           summary_token_weights)
from domain.sampling import subset_sample
from domain.selectors import (AbstractSentenceSelector, build_selector,
                              full_summary, hard_select, normalize,
                              summary_from_indices)
from domain.text import EmbeddingTable


class SelectAndRankModel:

    def __init__(
        self,
        spec: ModelSpec,
        vocabulary: Vocabulary,
        store: ParameterStore | None = None,
        seed: int = config.SEED,
        embeddings: EmbeddingTable | None = None,
        k1: float = config.BM25_K1,
        b: float = config.BM25_B,
    ) -> None:
        self.spec = spec
        self.vocabulary = vocabulary
        self.store = store if store is not None else ParameterStore()
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.ranker = TransformerRanker(self.store, spec.ranker, rng)
        self.selector: AbstractSentenceSelector | None = None
        if spec.mode != 'truncate':
            self.selector = build_selector(spec.selector, self.store,
                                           vocabulary, rng, embeddings, k1, b)

    @property
    def max_len(self) -> int:
        return self.spec.ranker.max_len

    def _selector_rng(self, query: Query,
                      document: Document) -> np.random.Generator:
        # Случайный отбор зависит только от seed и пары (q, d).
        return np.random.default_rng([
            self.seed,
            zlib.crc32(query.query_id.encode('utf-8')),
            zlib.crc32(document.doc_id.encode('utf-8')),
        ])

    def sentence_scores(self, query: Query,
                        document: Document) -> SentenceScores | None:
        if self.selector is None:
            return None
        return self.selector.score_sentences(
            query, document, self._selector_rng(query, document))

    def select(self, query: Query, document: Document, k: int,
               head_limit: int | None = None
               ) -> tuple[SentenceScores | None, Summary]:
        scores = self.sentence_scores(query, document)
        if scores is None:
            return None, full_summary(document)
        return scores, hard_select(scores, k, document, head_limit)

    def ranker_input(self, query: Query, summary: Summary) -> RankerInput:
        return assemble_input(query, summary, self.max_len, self.vocabulary)

    def score_summary(self, query: Query, summary: Summary) -> float:
        return self.ranker.score(self.ranker_input(query, summary))

    def score(self, query: Query, document: Document, k: int,
              head_limit: int | None = None) -> float:
        _, summary = self.select(query, document, k, head_limit)
        return self.score_summary(query, summary)

    def explain(self, query: Query, document: Document, k: int,
                head_limit: int | None = None) -> Explanation:
        """Оценка документа вместе с логитами, вероятностями и флагами
        отбора по каждому предложению."""
        scores, summary = self.select(query, document, k, head_limit)
        probabilities = None
        if scores is not None and any(
                math.isfinite(logit) for logit in scores.logits):
            probabilities = normalize(scores).probabilities
        selected = set(summary.indices)
        sentences = []
        for index, sentence in enumerate(document.sentences):
            logit = None
            if scores is not None and math.isfinite(scores.logits[index]):
                logit = scores.logits[index]
            sentences.append(ExplainedSentence(
                index=index,
                text=sentence.text,
                logit=logit,
                probability=(probabilities[index]
                             if probabilities is not None else None),
                selected=index in selected,
            ))
        return Explanation(
            query_id=query.query_id,
            doc_id=document.doc_id,
            score=self.score_summary(query, summary),
            sentences=sentences,
        )

    def training_score(
        self,
        query: Query,
        document: Document,
        train_config: TrainConfig,
        rng: np.random.Generator,
        training: bool = True,
        surrogate: bool = False,
        uniforms=None,
    ) -> Tensor:
        """Оценка пары как узел графа для шага обучения.

        В режиме e2e: логиты селектора -> ослабленная выборка k
        предложений -> straight-through масштабирование токенов сводки.
        В остальных режимах ранкер учится на начале документа."""
        if train_config.mode != 'e2e' or self.selector is None:
            ranker_input = self.ranker_input(query, full_summary(document))
            return self.ranker.score_graph(ranker_input, training=training,
                                           rng=rng)

        logits = self.selector.score_graph(query, document)
        head_limit = train_config.head_limit
        if head_limit is not None and head_limit < logits.shape[0]:
            beyond = np.arange(logits.shape[0]) >= head_limit
            logits = ad.masked_fill(logits, beyond, -math.inf)
        eligible = int(np.isfinite(logits.data).sum())
        if not eligible:
            ranker_input = self.ranker_input(
                query, summary_from_indices(document, (), train_config.k))
            return self.ranker.score_graph(ranker_input, training=training,
                                           rng=rng)

        subset = subset_sample(logits, min(train_config.k, eligible),
                               train_config.temperature, rng, uniforms)
        summary = summary_from_indices(document, subset.indices,
                                       train_config.k)
        ranker_input = self.ranker_input(query, summary)
        if train_config.token_weighting == 'softmax':
            sentence_weights = ad.softmax(logits)
        else:
            sentence_weights = subset.v
        weights = summary_token_weights(
            ranker_input, ad.clip(sentence_weights, 0.0, 1.0))
        return self.ranker.score_graph(ranker_input, weights,
                                       training=training, rng=rng,
                                       surrogate=surrogate)
