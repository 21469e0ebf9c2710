"""Метрики ранжирования и анализ пропущенных токенов.

Релевантность бинаризуется по порогу >= 1 для MAP и MRR; запросы без
релевантных документов в среднее не входят."""
import logging
import math
from typing import Iterable, Literal, Sequence

from domain.exceptions import EvaluationError
from domain.models import Document, MetricTable, Qrels, RunFile, Summary

Gain = Literal['linear', 'exponential']


def average_precision(ranking: Sequence[str],
                      judgments: dict[str, int]) -> float:
    relevant_total = sum(1 for grade in judgments.values() if grade >= 1)
    if not relevant_total:
        return 0.0
    hits = 0
    total = 0.0
    for rank, doc_id in enumerate(ranking, start=1):
        if judgments.get(doc_id, 0) >= 1:
            hits += 1
            total += hits / rank
    return total / relevant_total


def _gain(grade: int, gain: Gain) -> float:
    if gain == 'exponential':
        return 2.0 ** grade - 1.0
    return float(grade)


def _dcg(gains: Iterable[float]) -> float:
    return sum(value / math.log2(rank + 1)
               for rank, value in enumerate(gains, start=1))


def ndcg_at_k(ranking: Sequence[str], judgments: dict[str, int], k: int,
              gain: Gain = 'linear') -> float:
    """nDCG@k; идеальное упорядочение строится по всем оценкам запроса."""
    if k < 1:
        raise EvaluationError(f'Отсечение nDCG должно быть >= 1: {k}')
    ideal = sorted((_gain(grade, gain) for grade in judgments.values()),
                   reverse=True)[:k]
    ideal_dcg = _dcg(ideal)
    if ideal_dcg == 0:
        return 0.0
    return _dcg(_gain(judgments.get(doc_id, 0), gain)
                for doc_id in ranking[:k]) / ideal_dcg


def mrr(ranking: Sequence[str], judgments: dict[str, int]) -> float:
    """Обратный ранг первого релевантного документа запроса."""
    for rank, doc_id in enumerate(ranking, start=1):
        if judgments.get(doc_id, 0) >= 1:
            return 1.0 / rank
    return 0.0


def metric_names(cutoffs: Sequence[int]) -> tuple[str, ...]:
    return ('map', *(f'ndcg@{cutoff}' for cutoff in cutoffs), 'mrr')


def evaluate_run(run: RunFile, qrels: Qrels, cutoffs: Sequence[int],
                 gain: Gain = 'linear') -> MetricTable:
    """Метрики по запросам и их средние. Запросы выдачи без оценок
    исключаются с предупреждением."""
    names = metric_names(cutoffs)
    per_query: dict[str, dict[str, float]] = {}
    for query_id in sorted(run.rankings):
        if query_id not in qrels.judgments:
            logging.warning(f'Запрос {query_id} отсутствует в qrels')
            continue
        if not qrels.relevant_count(query_id):
            logging.info(f'Запрос {query_id}: нет релевантных документов')
            continue
        ranking = run.doc_ids(query_id)
        judgments = qrels.for_query(query_id)
        values = {'map': average_precision(ranking, judgments)}
        for cutoff in cutoffs:
            values[f'ndcg@{cutoff}'] = ndcg_at_k(ranking, judgments, cutoff,
                                                 gain)
        values['mrr'] = mrr(ranking, judgments)
        per_query[query_id] = values
    if not per_query:
        logging.warning('Нет запросов для оценки: средние равны 0')
    means = {
        name: (math.fsum(values[name] for values in per_query.values())
               / len(per_query) if per_query else 0.0)
        for name in names
    }
    return MetricTable(metric_names=names, per_query=per_query, means=means)


def missing_token_fraction(document: Document, summary: Summary,
                           head_budget: int) -> float:
    """Доля токенов сводки, чья позиция в потоке токенов документа
    не меньше head_budget."""
    if head_budget < 0:
        raise EvaluationError(f'head_budget должен быть >= 0: {head_budget}')
    if not summary.token_ids:
        return 0.0
    offsets = document.sentence_offsets()
    missing = 0
    for index in summary.indices:
        start = offsets[index]
        end = start + len(document.sentences[index].token_ids)
        missing += max(0, end - max(start, head_budget))
    return missing / len(summary.token_ids)


def missing_token_cdf(fractions: Iterable[float]) -> list[tuple[float, float]]:
    """Эмпирическая функция распределения: пары (доля, накопленная
    доля пар), по одной на каждое различное значение."""
    values = sorted(fractions)
    count = len(values)
    return [(value, (index + 1) / count)
            for index, value in enumerate(values)
            if index + 1 == count or values[index + 1] != value]
