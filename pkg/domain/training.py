"""Выборка троек, попарная функция потерь с зазором, AdamW и три
режима обучения: усечение, конвейер и сквозное обучение."""
import abc
import logging
import math
from typing import Iterable, Sequence

import numpy as np

import config
from domain import autodiff as ad
from domain.autodiff import ParameterStore, Tensor
from domain.evaluation import average_precision
from domain.exceptions import TrainingError
from domain.models import (Corpus, Qrels, Query, RunFile, TrainConfig,
                           TrainingLogRecord, TrainingReport, Triple)
from domain.reranker import SelectAndRankModel

SELECTOR_PREFIX = 'selector.'
BCE_CLAMP = 1e-7


def sample_triples(qrels: Qrels, candidates: dict[str, Sequence[str]],
                   rng: np.random.Generator, count: int) -> list[Triple]:
    """Сбалансированная выборка: запросы обходятся по кругу в порядке
    сортировки, внутри запроса пара (d+, d-) выбирается равномерно.

    Положительные документы - с релевантностью >= 1, отрицательные -
    с нулевой или без оценки. Запрос без одной из групп пропускается."""
    pools = {}
    for query_id in sorted(candidates):
        judgments = qrels.for_query(query_id)
        positives = [doc_id for doc_id in candidates[query_id]
                     if judgments.get(doc_id, 0) >= 1]
        negatives = [doc_id for doc_id in candidates[query_id]
                     if judgments.get(doc_id, 0) == 0]
        if not positives or not negatives:
            missing = 'положительных' if not positives else 'отрицательных'
            logging.warning(f'Запрос {query_id} пропущен: нет {missing} '
                            'документов среди кандидатов')
            continue
        pools[query_id] = (positives, negatives)
    if not pools:
        raise TrainingError('Нет запросов, пригодных для выборки троек')

    query_ids = list(pools)
    triples = []
    for index in range(count):
        query_id = query_ids[index % len(query_ids)]
        positives, negatives = pools[query_id]
        triples.append(Triple(
            query_id=query_id,
            positive_id=positives[int(rng.integers(len(positives)))],
            negative_id=negatives[int(rng.integers(len(negatives)))],
        ))
    return triples


def hinge_loss(positive: Tensor, negative: Tensor, margin: float) -> Tensor:
    """max(0, m - s+ + s-)."""
    return ad.relu(margin - positive + negative)


def batch_loss(pairs: Iterable[tuple[Tensor, Tensor]],
               margin: float) -> Tensor:
    losses = [ad.reshape(hinge_loss(positive, negative, margin), (1,))
              for positive, negative in pairs]
    return ad.mean(ad.concat(losses))


class AdamW:
    """Adam с отделенным затуханием весов и линейным разогревом:
    lr = base_lr * min(1, step / warmup)."""

    def __init__(
        self,
        store: ParameterStore,
        names: Sequence[str],
        selector_lr: float,
        ranker_lr: float,
        weight_decay: float = config.WEIGHT_DECAY,
        warmup: int = config.WARMUP_BATCHES,
        betas: tuple[float, float] = config.ADAM_BETAS,
        eps: float = config.ADAM_EPS,
    ) -> None:
        self._store = store
        self._names = list(names)
        self._selector_lr = selector_lr
        self._ranker_lr = ranker_lr
        self._weight_decay = weight_decay
        self._warmup = warmup
        self._betas = betas
        self._eps = eps
        self.step_count = 0

    def base_lr(self, name: str) -> float:
        if name.startswith(SELECTOR_PREFIX):
            return self._selector_lr
        return self._ranker_lr

    def warmup_factor(self, step: int) -> float:
        if self._warmup <= 0:
            return 1.0
        return min(1.0, step / self._warmup)

    def step(self) -> bool:
        """Один шаг по накопленным градиентам. При нечисловом градиенте
        шаг пропускается. Градиенты обнуляются в обоих случаях."""
        store = self._store
        for name in self._names:
            if not np.all(np.isfinite(store.get(name).grad)):
                logging.warning(f'Шаг {self.step_count + 1} пропущен: '
                                f'нечисловой градиент {name}')
                store.zero_grad()
                return False

        self.step_count += 1
        factor = self.warmup_factor(self.step_count)
        beta1, beta2 = self._betas
        for name in self._names:
            tensor = store.get(name)
            state = store.state(name)
            state.step += 1
            grad = tensor.grad
            state.first_moment = (beta1 * state.first_moment
                                  + (1 - beta1) * grad)
            state.second_moment = (beta2 * state.second_moment
                                   + (1 - beta2) * grad * grad)
            first = state.first_moment / (1 - beta1 ** state.step)
            second = state.second_moment / (1 - beta2 ** state.step)
            lr = self.base_lr(name) * factor
            tensor.data -= lr * self._weight_decay * tensor.data
            tensor.data -= lr * first / (np.sqrt(second) + self._eps)
        store.zero_grad()
        return True


def split_queries(query_ids: Iterable[str], validation_fraction: float,
                  selector_fraction: float,
                  seed: int) -> tuple[list[str], list[str], list[str]]:
    """Детерминированное разбиение на обучающие, валидационные и
    запросы для обучения селектора (конвейер)."""
    ordered = sorted(set(query_ids))
    permutation = np.random.default_rng(seed).permutation(len(ordered))
    shuffled = [ordered[index] for index in permutation]

    def _size(fraction: float) -> int:
        if fraction <= 0:
            return 0
        return max(1, round(len(ordered) * fraction))

    validation_size = _size(validation_fraction)
    selector_size = _size(selector_fraction)
    validation = sorted(shuffled[:validation_size])
    selector = sorted(
        shuffled[validation_size:validation_size + selector_size])
    train = sorted(shuffled[validation_size + selector_size:])
    if not validation:
        raise TrainingError('Валидационное множество запросов пусто')
    if not train:
        raise TrainingError('Обучающее множество запросов пусто')
    return train, validation, selector


def rank_candidates(model: SelectAndRankModel, query: Query, corpus: Corpus,
                    doc_ids: Sequence[str], k: int,
                    head_limit: int | None = None) -> list[tuple[str, float]]:
    """Переранжирование кандидатов по убыванию оценки модели; при
    равенстве сохраняется порядок первой стадии."""
    scored = [(doc_id, model.score(query, corpus.document(doc_id), k,
                                   head_limit))
              for doc_id in doc_ids]
    order = sorted(range(len(scored)), key=lambda index: (-scored[index][1],
                                                          index))
    return [scored[index] for index in order]


class AbstractTrainer(abc.ABC):
    """Абстрактный класс обучения. Лучшее по валидационному MAP
    состояние параметров восстанавливается в конце обучения."""

    def __init__(
        self,
        model: SelectAndRankModel,
        corpus: Corpus,
        queries: dict[str, Query],
        qrels: Qrels,
        run: RunFile,
        train_config: TrainConfig,
        train_ids: Sequence[str],
        validation_ids: Sequence[str],
        selector_ids: Sequence[str] = (),
    ) -> None:
        self.model = model
        self.corpus = corpus
        self.queries = queries
        self.qrels = qrels
        self.run = run
        self.config = train_config
        self.train_ids = list(train_ids)
        self.validation_ids = list(validation_ids)
        self.selector_ids = list(selector_ids)
        self.log_records: list[TrainingLogRecord] = []
        self.report = TrainingReport()
        if not self.validation_ids:
            raise TrainingError('Валидационное множество запросов пусто')

    def train(self) -> TrainingReport:
        """Метод для обучения модели."""
        logging.info(f'Обучение в режиме {self.config.mode}: '
                     f'{len(self.train_ids)} обучающих, '
                     f'{len(self.validation_ids)} валидационных запросов')
        return self._train()

    @abc.abstractmethod
    def _train(self) -> TrainingReport:
        raise NotImplementedError

    def validate(self) -> float:
        """MAP на валидационных запросах с выводом как при ранжировании."""
        values = []
        for query_id in self.validation_ids:
            if not self.qrels.relevant_count(query_id):
                continue
            ranked = rank_candidates(
                self.model, self.queries[query_id], self.corpus,
                self.run.doc_ids(query_id), self.config.k,
                self.config.head_limit)
            values.append(average_precision(
                [doc_id for doc_id, _ in ranked],
                self.qrels.for_query(query_id)))
        if not values:
            logging.warning('Среди валидационных запросов нет запросов '
                            'с релевантными документами')
            return 0.0
        return math.fsum(values) / len(values)

    def _ranker_parameter_names(self) -> list[str]:
        return [name for name in self.model.store
                if not name.startswith(SELECTOR_PREFIX)]

    def _score(self, query_id: str, doc_id: str,
               rng: np.random.Generator) -> Tensor:
        return self.model.training_score(
            self.queries[query_id], self.corpus.document(doc_id),
            self.config, rng)

    def _run_epochs(self, names: Sequence[str]) -> TrainingReport:
        store = self.model.store
        train_config = self.config
        optimizer = AdamW(store, names, train_config.selector_lr,
                          train_config.ranker_lr, train_config.weight_decay,
                          train_config.warmup)
        rng = np.random.default_rng(train_config.seed)
        candidates = {query_id: self.run.doc_ids(query_id)
                      for query_id in self.train_ids}
        store.zero_grad()
        best_snapshot = None
        for epoch in range(1, train_config.epochs + 1):
            triples = sample_triples(self.qrels, candidates, rng,
                                     train_config.triples_per_epoch)
            for start in range(0, len(triples), train_config.batch_size):
                batch = triples[start:start + train_config.batch_size]
                loss = batch_loss(
                    ((self._score(triple.query_id, triple.positive_id, rng),
                      self._score(triple.query_id, triple.negative_id, rng))
                     for triple in batch),
                    train_config.margin)
                ad.backward(loss)
                lr = train_config.ranker_lr * optimizer.warmup_factor(
                    optimizer.step_count + 1)
                self.report.steps_total += 1
                if not optimizer.step():
                    self.report.steps_skipped += 1
                self.log_records.append(TrainingLogRecord(
                    epoch=epoch, step=self.report.steps_total,
                    loss=loss.item(), lr=lr))

            validation_map = self.validate()
            self.log_records.append(TrainingLogRecord(
                epoch=epoch, validation_map=validation_map))
            logging.info(f'Эпоха {epoch}: MAP на валидации '
                         f'{validation_map:.4f}')
            if best_snapshot is None or \
                    validation_map > self.report.best_validation_map:
                best_snapshot = store.snapshot()
                self.report.best_epoch = epoch
                self.report.best_validation_map = validation_map
        store.load(best_snapshot)
        return self.report


class TruncationTrainer(AbstractTrainer):
    """Ранкер учится на начале полного документа, без селектора."""

    def _train(self) -> TrainingReport:
        return self._run_epochs(self._ranker_parameter_names())


class PipelineTrainer(AbstractTrainer):
    """Ранкер учится как при усечении; обучаемый селектор отдельно
    предобучается на слабой разметке предложений."""

    def _train(self) -> TrainingReport:
        selector = self.model.selector
        if selector is not None and selector.trainable:
            pretrainer = SelectorPretrainer(
                self.model, self.corpus, self.queries, self.qrels,
                self.config, self.selector_ids)
            self.report.selector_pairs = pretrainer.pretrain()
            self.log_records.extend(pretrainer.log_records)
        return self._run_epochs(self._ranker_parameter_names())


class EndToEndTrainer(AbstractTrainer):
    """Селектор и ранкер учатся совместно от функции потерь ранжирования
    через ослабленную выборку и straight-through оценку."""

    def _train(self) -> TrainingReport:
        selector = self.model.selector
        if selector is None or not selector.trainable:
            raise TrainingError('Режим e2e требует обучаемого селектора')
        return self._run_epochs(list(self.model.store))


class SelectorPretrainer:
    """Обучение селектора бинарной кросс-энтропией sigmoid(логита) по
    слабым меткам: предложение релевантного документа, содержащее
    термин запроса, - положительное, остальные - отрицательные."""

    def __init__(self, model: SelectAndRankModel, corpus: Corpus,
                 queries: dict[str, Query], qrels: Qrels,
                 train_config: TrainConfig,
                 query_ids: Sequence[str]) -> None:
        self.model = model
        self.corpus = corpus
        self.queries = queries
        self.qrels = qrels
        self.config = train_config
        self.query_ids = list(query_ids)
        self.log_records: list[TrainingLogRecord] = []

    def weak_labels(self) -> list[tuple[str, str, tuple[int, ...],
                                        tuple[float, ...]]]:
        """(запрос, документ, индексы непустых предложений, метки)."""
        vocabulary = self.corpus.vocabulary
        items = []
        for query_id in self.query_ids:
            terms = {token for token in self.queries[query_id].token_ids
                     if not vocabulary.is_special(token)}
            for doc_id, grade in sorted(self.qrels.for_query(query_id)
                                        .items()):
                if doc_id not in self.corpus:
                    continue
                document = self.corpus.document(doc_id)
                indices = tuple(index for index, sentence
                                in enumerate(document.sentences)
                                if sentence.token_ids)
                if not indices:
                    continue
                labels = tuple(
                    float(grade >= 1 and bool(
                        terms & set(document.sentences[index].token_ids)))
                    for index in indices)
                items.append((query_id, doc_id, indices, labels))
        return items

    def pretrain(self) -> int:
        """Возвращает число размеченных пар (запрос, предложение)."""
        items = self.weak_labels()
        pairs = sum(len(labels) for *_, labels in items)
        if not items or not self.config.selector_epochs:
            logging.warning('Предобучение селектора пропущено: нет '
                            'размеченных предложений или эпох')
            return pairs
        store = self.model.store
        names = [name for name in store if name.startswith(SELECTOR_PREFIX)]
        optimizer = AdamW(store, names, self.config.selector_lr,
                          self.config.ranker_lr, self.config.weight_decay,
                          self.config.warmup)
        rng = np.random.default_rng(self.config.seed)
        store.zero_grad()
        step = 0
        for epoch in range(1, self.config.selector_epochs + 1):
            order = rng.permutation(len(items))
            for start in range(0, len(order), self.config.batch_size):
                batch = [items[index]
                         for index in order[start:start + self.config.
                                            batch_size]]
                loss = ad.mean(ad.concat([
                    ad.reshape(self._document_loss(*item), (1,))
                    for item in batch]))
                ad.backward(loss)
                lr = self.config.selector_lr * optimizer.warmup_factor(
                    optimizer.step_count + 1)
                optimizer.step()
                step += 1
                self.log_records.append(TrainingLogRecord(
                    phase='selector', epoch=epoch, step=step,
                    loss=loss.item(), lr=lr))
        logging.info(f'Селектор предобучен на {pairs} предложениях')
        return pairs

    def _document_loss(self, query_id: str, doc_id: str,
                       indices: tuple[int, ...],
                       labels: tuple[float, ...]) -> Tensor:
        logits = self.model.selector.score_graph(
            self.queries[query_id], self.corpus.document(doc_id))
        probabilities = ad.clip(ad.sigmoid(ad.gather(logits, indices)),
                                BCE_CLAMP, 1.0 - BCE_CLAMP)
        targets = np.asarray(labels)
        likelihood = (ad.log(probabilities) * targets
                      + ad.log(1.0 - probabilities) * (1.0 - targets))
        return -ad.mean(likelihood)


TRAINERS: dict[str, type[AbstractTrainer]] = {
    'truncate': TruncationTrainer,
    'pipeline': PipelineTrainer,
    'e2e': EndToEndTrainer,
}
