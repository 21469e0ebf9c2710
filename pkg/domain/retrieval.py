import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import config
from domain.exceptions import RetrievalError
from domain.models import Corpus, Query


@dataclass(frozen=True)
class CollectionStats:
    """Статистики коллекции для BM25: число единиц, df по токенам и
    средняя длина. Для оценки предложений коллекцией служат
    предложения одного документа."""
    unit_count: int
    document_frequency: dict[int, int]
    average_length: float


def bm25_score(
    query_tokens: Sequence[int],
    unit_tokens: Sequence[int],
    stats: CollectionStats,
    k1: float = config.BM25_K1,
    b: float = config.BM25_B,
) -> float:
    """Okapi BM25 одной единицы (документа или предложения).
    Повторяющиеся термины запроса учитываются каждый раз."""
    if not unit_tokens or stats.average_length <= 0:
        return 0.0
    frequencies = Counter(unit_tokens)
    length_norm = 1.0 - b + b * len(unit_tokens) / stats.average_length
    score = 0.0
    for token in query_tokens:
        tf = frequencies.get(token, 0)
        if not tf:
            continue
        df = stats.document_frequency.get(token, 0)
        idf = math.log(1.0 + (stats.unit_count - df + 0.5) / (df + 0.5))
        score += idf * tf * (k1 + 1.0) / (tf + k1 * length_norm)
    return score


def sentence_stats(sentences: Iterable[Sequence[int]]) -> CollectionStats:
    sentences = list(sentences)
    frequency: Counter = Counter()
    for tokens in sentences:
        frequency.update(set(tokens))
    total = sum(len(tokens) for tokens in sentences)
    return CollectionStats(
        unit_count=len(sentences),
        document_frequency=dict(frequency),
        average_length=total / len(sentences) if sentences else 0.0,
    )


@dataclass
class InvertedIndex:
    """Инвертированный индекс: token_id -> [(порядковый номер
    документа, tf)], отсортированные по номеру документа."""
    postings: dict[int, list[tuple[int, int]]]
    document_lengths: list[int]
    doc_ids: list[str]
    average_length: float
    document_count: int
    document_frequency: dict[int, int] = field(init=False)

    def __post_init__(self) -> None:
        self.document_frequency = {token: len(items)
                                   for token, items in self.postings.items()}

    @property
    def stats(self) -> CollectionStats:
        return CollectionStats(
            unit_count=self.document_count,
            document_frequency=self.document_frequency,
            average_length=self.average_length,
        )


def build_index(corpus: Corpus) -> InvertedIndex:
    if not len(corpus):
        raise RetrievalError('Нельзя построить индекс по пустому корпусу')
    postings: dict[int, list[tuple[int, int]]] = {}
    lengths = []
    for ordinal, document in enumerate(corpus.documents):
        stream = document.token_stream()
        lengths.append(len(stream))
        for token, tf in sorted(Counter(stream).items()):
            postings.setdefault(token, []).append((ordinal, tf))
    for items in postings.values():
        items.sort()
    return InvertedIndex(
        postings=postings,
        document_lengths=lengths,
        doc_ids=[document.doc_id for document in corpus.documents],
        average_length=sum(lengths) / len(lengths),
        document_count=len(lengths),
    )


class Bm25Retriever:
    """Первая стадия: top-N документов по BM25."""

    def __init__(self, index: InvertedIndex, k1: float = config.BM25_K1,
                 b: float = config.BM25_B) -> None:
        self._index = index
        self._k1 = k1
        self._b = b

    def retrieve(self, query: Query, depth: int) -> list[tuple[str, float]]:
        """Возвращает (doc_id, score) по убыванию оценки; при равенстве
        выше документ с меньшим порядковым номером."""
        if depth <= 0:
            raise RetrievalError(f'Глубина выдачи должна быть > 0: {depth}')
        index = self._index
        if index.average_length <= 0:
            return []
        scores: dict[int, float] = {}
        for token in query.token_ids:
            items = index.postings.get(token)
            if not items:
                continue
            df = len(items)
            idf = math.log(
                1.0 + (index.document_count - df + 0.5) / (df + 0.5))
            for ordinal, tf in items:
                norm = 1.0 - self._b + self._b * (
                    index.document_lengths[ordinal] / index.average_length)
                scores[ordinal] = scores.get(ordinal, 0.0) + (
                    idf * tf * (self._k1 + 1.0) / (tf + self._k1 * norm))
        ranked = sorted(scores.items(), key=lambda item: (-item[1], item[0]))
        if not ranked:
            logging.warning(f'Запрос {query.query_id}: нет совпадений в '
                            'индексе')
        return [(index.doc_ids[ordinal], score)
                for ordinal, score in ranked[:depth]]
