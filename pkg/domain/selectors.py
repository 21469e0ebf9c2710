"""Селекторы предложений: оценивают каждое предложение документа
относительно запроса и извлекают сводку из k лучших."""
import abc
import math
from collections import Counter

import numpy as np

import config
from domain import autodiff as ad
from domain.autodiff import ParameterStore, Tensor
from domain.exceptions import SelectionError
from domain.layers import BidirectionalGRU, Embedding, Linear
from domain.models import (Document, Query, SelectorConfig, SentenceScores,
                           Summary, Vocabulary)
from domain.retrieval import bm25_score, sentence_stats
from domain.text import EmbeddingTable

EXCLUDED = -math.inf


def _empty_mask(document: Document) -> np.ndarray:
    return np.array([not sentence.token_ids
                     for sentence in document.sentences], dtype=bool)


class AbstractSentenceSelector(abc.ABC):
    """Абстрактный селектор. Пустые предложения получают логит -inf
    и не участвуют ни в нормализации, ни в отборе."""

    trainable = False

    def score_sentences(
        self,
        query: Query,
        document: Document,
        rng: np.random.Generator | None = None,
    ) -> SentenceScores:
        """Метод для оценки предложений документа."""
        return self._score_sentences(query, document, rng)

    @abc.abstractmethod
    def _score_sentences(
        self,
        query: Query,
        document: Document,
        rng: np.random.Generator | None,
    ) -> SentenceScores:
        raise NotImplementedError


class TfIdfSelector(AbstractSentenceSelector):
    """w_i = сумма tf(t, s_i) * ln(N / df(t)) по общим терминам."""

    def __init__(self, vocabulary: Vocabulary) -> None:
        self._vocabulary = vocabulary

    def _score_sentences(self, query, document, rng):
        vocabulary = self._vocabulary
        terms = {token for token in query.token_ids
                 if not vocabulary.is_special(token)}
        count = vocabulary.document_count
        logits = []
        for sentence in document.sentences:
            if not sentence.token_ids:
                logits.append(EXCLUDED)
                continue
            frequencies = Counter(sentence.token_ids)
            logits.append(sum(
                frequencies[token] * math.log(
                    count / vocabulary.document_frequency[token])
                for token in terms if token in frequencies))
        return SentenceScores(logits=tuple(logits))


class Bm25Selector(AbstractSentenceSelector):
    """BM25 по предложениям; коллекция - предложения самого документа."""

    def __init__(self, k1: float = config.BM25_K1,
                 b: float = config.BM25_B) -> None:
        self._k1 = k1
        self._b = b

    def _score_sentences(self, query, document, rng):
        stats = sentence_stats(sentence.token_ids
                               for sentence in document.sentences
                               if sentence.token_ids)
        return SentenceScores(logits=tuple(
            bm25_score(query.token_ids, sentence.token_ids, stats,
                       self._k1, self._b)
            if sentence.token_ids else EXCLUDED
            for sentence in document.sentences))


class SemanticSelector(AbstractSentenceSelector):
    """Косинус между средними статическими векторами запроса и
    предложения. Нулевое среднее дает оценку 0."""

    def __init__(self, embeddings: EmbeddingTable) -> None:
        self._embeddings = embeddings

    def _average(self, token_ids) -> np.ndarray:
        if not token_ids:
            return np.zeros(self._embeddings.dimension)
        return self._embeddings.lookup(token_ids).mean(axis=0)

    def _score_sentences(self, query, document, rng):
        query_vector = self._average(query.token_ids)
        query_norm = np.linalg.norm(query_vector)
        logits = []
        for sentence in document.sentences:
            if not sentence.token_ids:
                logits.append(EXCLUDED)
                continue
            vector = self._average(sentence.token_ids)
            norm = np.linalg.norm(vector)
            if norm == 0 or query_norm == 0:
                logits.append(0.0)
                continue
            logits.append(float(vector @ query_vector / (norm * query_norm)))
        return SentenceScores(logits=tuple(logits))


class RandomSelector(AbstractSentenceSelector):
    """Независимые равномерные логиты - случайный базовый отбор."""

    def _score_sentences(self, query, document, rng):
        if rng is None:
            raise SelectionError('Случайному селектору нужен генератор')
        logits = rng.random(len(document.sentences))
        logits[_empty_mask(document)] = EXCLUDED
        return SentenceScores(logits=tuple(logits.tolist()))


class AbstractTrainableSelector(AbstractSentenceSelector):
    """Дифференцируемый селектор: логиты строятся как узел графа."""

    trainable = True

    def __init__(self, store: ParameterStore, selector_config: SelectorConfig,
                 vocabulary: Vocabulary, rng: np.random.Generator) -> None:
        self._store = store
        self._config = selector_config
        self._unk_id = vocabulary.unk_id
        self._embedding = Embedding(store, selector_config.embedding_name,
                                    len(vocabulary),
                                    selector_config.embedding_dim, rng)

    def score_graph(self, query: Query, document: Document) -> Tensor:
        """Логиты (n,) как тензор графа; пустые предложения - -inf."""
        if not document.sentences:
            return ad.as_tensor(np.zeros(0))
        return self._score_graph(query, document)

    @abc.abstractmethod
    def _score_graph(self, query: Query, document: Document) -> Tensor:
        raise NotImplementedError

    def _score_sentences(self, query, document, rng):
        logits = self.score_graph(query, document)
        return SentenceScores(logits=tuple(logits.data.tolist()))

    def _query_ids(self, query: Query) -> tuple[int, ...]:
        return query.token_ids or (self._unk_id,)


class LinearSelector(AbstractTrainableSelector):
    """Запрос и предложение - средние эмбеддингов, пропущенные через
    аффинный слой F; логит - скалярное произведение."""

    def __init__(self, store, selector_config, vocabulary, rng) -> None:
        super().__init__(store, selector_config, vocabulary, rng)
        dim = selector_config.embedding_dim
        if selector_config.shared_projection:
            self._query_projection = Linear(store, 'selector.projection',
                                            dim, dim, rng)
            self._sentence_projection = self._query_projection
        else:
            self._query_projection = Linear(
                store, 'selector.query_projection', dim, dim, rng)
            self._sentence_projection = Linear(
                store, 'selector.sentence_projection', dim, dim, rng)

    def _score_graph(self, query, document):
        empty = _empty_mask(document)
        if empty.all():
            return ad.as_tensor(np.full(len(empty), EXCLUDED))
        stream = document.token_stream()
        averaging = np.zeros((len(empty), len(stream)))
        for index, (offset, sentence) in enumerate(
                zip(document.sentence_offsets(), document.sentences)):
            if sentence.token_ids:
                end = offset + len(sentence.token_ids)
                averaging[index, offset:end] = 1.0 / len(sentence.token_ids)
        query_mean = ad.mean(self._embedding(self._query_ids(query)),
                             axis=0, keepdims=True)
        sentence_means = ad.matmul(ad.as_tensor(averaging),
                                   self._embedding(stream))
        projected_query = self._query_projection(query_mean)
        projected_sentences = self._sentence_projection(sentence_means)
        logits = ad.reshape(projected_sentences @ projected_query.T,
                            (len(empty),))
        return ad.masked_fill(logits, empty, EXCLUDED)


class AttentiveSelector(AbstractTrainableSelector):
    """Двунаправленный GRU с внимательным max-pooling по токенам;
    логит - косинус представления предложения и запроса."""

    def __init__(self, store, selector_config, vocabulary, rng) -> None:
        super().__init__(store, selector_config, vocabulary, rng)
        self._encoder = BidirectionalGRU(
            store, 'selector.encoder', selector_config.embedding_dim,
            selector_config.hidden_size, rng)
        width = self._encoder.output_dim
        self._token_attention = Linear(store, 'selector.attention_token',
                                       width, width, rng, bias=False)
        self._query_attention = Linear(store, 'selector.attention_query',
                                       width, width, rng, bias=False)
        self._attention_score = Linear(store, 'selector.attention_score',
                                       width, 1, rng, bias=False)

    def _score_graph(self, query, document):
        empty = _empty_mask(document)
        if empty.all():
            return ad.as_tensor(np.full(len(empty), EXCLUDED))
        query_states = self._encoder(self._embedding(self._query_ids(query)))
        query_vector = ad.reduce_max(query_states, axis=0, keepdims=True)
        query_term = self._query_attention(query_vector)
        rows = []
        for sentence in document.sentences:
            if not sentence.token_ids:
                rows.append(ad.as_tensor(
                    np.zeros((1, self._encoder.output_dim))))
                continue
            states = self._encoder(self._embedding(sentence.token_ids))
            mixed = self._token_attention(states) + query_term
            attention = ad.exp(self._attention_score(ad.tanh(mixed)))
            rows.append(ad.reduce_max(states * attention, axis=0,
                                      keepdims=True))
        sentence_vectors = ad.concat(rows, axis=0)
        logits = _row_cosine(sentence_vectors, query_vector)
        return ad.masked_fill(logits, empty, EXCLUDED)


def _row_cosine(rows: Tensor, vector: Tensor, eps: float = 1e-12) -> Tensor:
    numerator = ad.reduce_sum(rows * vector, axis=1)
    row_norms = ad.power(ad.reduce_sum(rows * rows, axis=1) + eps, 0.5)
    vector_norm = ad.power(ad.reduce_sum(vector * vector) + eps, 0.5)
    return numerator * ad.power(row_norms * vector_norm, -1.0)


def normalize(scores: SentenceScores) -> SentenceScores:
    """p_i = softmax(w)_i со сдвигом на максимум; -inf дает p_i = 0."""
    logits = np.asarray(scores.logits, dtype=np.float64)
    finite = np.isfinite(logits)
    if not finite.any():
        raise SelectionError('Все логиты равны -inf, нормализация невозможна')
    exps = np.zeros_like(logits)
    exps[finite] = np.exp(logits[finite] - logits[finite].max())
    return SentenceScores(logits=scores.logits,
                          probabilities=tuple((exps / exps.sum()).tolist()))


def summary_from_indices(document: Document, indices, k: int) -> Summary:
    indices = sorted(indices)
    token_ids = []
    origins = []
    for index in indices:
        tokens = document.sentences[index].token_ids
        token_ids.extend(tokens)
        origins.extend([index] * len(tokens))
    return Summary(indices=tuple(indices), k=k, token_ids=tuple(token_ids),
                   token_origins=tuple(origins))


def full_summary(document: Document) -> Summary:
    """Весь документ как сводка - вход базовой модели с усечением."""
    count = len(document.sentences)
    return summary_from_indices(document, range(count), max(1, count))


def hard_select(scores: SentenceScores, k: int, document: Document,
                head_limit: int | None = None) -> Summary:
    """k предложений с наибольшими логитами среди первых head_limit.
    При равенстве выигрывает меньший индекс; результат по возрастанию."""
    if k < 1:
        raise SelectionError(f'k должно быть >= 1: {k}')
    if len(scores.logits) != len(document.sentences):
        raise SelectionError(
            f'{document.doc_id}: {len(scores.logits)} логитов на '
            f'{len(document.sentences)} предложений')
    limit = len(scores.logits)
    if head_limit is not None:
        limit = min(limit, head_limit)
    eligible = [index for index in range(limit)
                if scores.logits[index] != EXCLUDED]
    chosen = sorted(eligible, key=lambda index: (-scores.logits[index],
                                                 index))[:k]
    return summary_from_indices(document, chosen, k)


def build_selector(
    selector_config: SelectorConfig,
    store: ParameterStore,
    vocabulary: Vocabulary,
    rng: np.random.Generator,
    embeddings: EmbeddingTable | None = None,
    k1: float = config.BM25_K1,
    b: float = config.BM25_B,
) -> AbstractSentenceSelector | None:
    """Создает селектор по его виду; 'none' означает отсутствие отбора."""
    kind = selector_config.kind
    if kind == 'none':
        return None
    if kind == 'tfidf':
        return TfIdfSelector(vocabulary)
    if kind == 'bm25':
        return Bm25Selector(k1, b)
    if kind == 'semantic':
        if embeddings is None:
            raise SelectionError('Селектору semantic нужны эмбеддинги')
        return SemanticSelector(embeddings)
    if kind == 'random':
        return RandomSelector()
    if kind == 'linear':
        return LinearSelector(store, selector_config, vocabulary, rng)
    if kind == 'attentive':
        return AttentiveSelector(store, selector_config, vocabulary, rng)
    raise SelectionError(f'Неизвестный селектор: {kind}')
