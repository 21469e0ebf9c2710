import abc
import asyncio
import logging
from pathlib import Path
from typing import Callable

from domain.evaluation import (evaluate_run, missing_token_cdf,
                               missing_token_fraction)
from domain.exceptions import CheckpointError, RankerError
from domain.models import (Corpus, Explanation, Query, RankingReport,
                           RunConfig, RunEntry, RunFile, TrainingLogRecord)
from domain.reranker import SelectAndRankModel
from domain.retrieval import Bm25Retriever, build_index
from domain.text import EmbeddingTable, ingest_corpus, load_embeddings
from domain.training import TRAINERS, rank_candidates, split_queries
from repository.checkpoints import (AbstractCheckpointRepository,
                                    BinaryCheckpointRepository, Checkpoint)
from repository.corpus import AbstractCorpusRepository, CorpusJsonRepository
from repository.reports import (JsonLinesRepository, TsvCdfRepository,
                                metric_repository)
from repository.trec import (AbstractRunRepository, TrecQrelsRepository,
                             TrecRunRepository, TsvQueryRepository)

SEPARATOR = '\n' + '-' * 20 + '\n'


class AbstractWorkflow(abc.ABC):
    """Абстрактный класс команды. Хранилища передаются классами, чтобы
    их можно было подменить."""

    def __init__(
        self,
        run_config: RunConfig,
        corpus_rep_cls: type[AbstractCorpusRepository] = CorpusJsonRepository,
        run_rep_cls: type[AbstractRunRepository] = TrecRunRepository,
        checkpoint_rep_cls: type[AbstractCheckpointRepository] = (
            BinaryCheckpointRepository),
    ) -> None:
        self.run_config = run_config
        self.corpus_rep_cls = corpus_rep_cls
        self.run_rep_cls = run_rep_cls
        self.checkpoint_rep_cls = checkpoint_rep_cls

    def run(self) -> None:
        """Метод для запуска команды."""
        self._run()

    @abc.abstractmethod
    def _run(self) -> None:
        raise NotImplementedError

    def _load_corpus(self) -> Corpus:
        path = self.run_config.artifact_file('index_path')
        return self.corpus_rep_cls(path).get()

    def _load_queries(self, corpus: Corpus) -> dict[str, Query]:
        path = self.run_config.input_file('queries_path')
        return TsvQueryRepository(path).get_all(corpus.vocabulary)

    def _load_run(self, field: str = 'run_in_path') -> RunFile:
        return self.run_rep_cls(self.run_config.artifact_file(field)).get()

    def _load_embeddings(self, corpus: Corpus,
                         selector: str) -> EmbeddingTable | None:
        if selector != 'semantic':
            return None
        return load_embeddings(self.run_config.input_file('embeddings_path'),
                               corpus.vocabulary)

    def _load_model(self, corpus: Corpus) -> SelectAndRankModel:
        """Модель из контрольной точки; архитектура берется из ее
        заголовка."""
        cfg = self.run_config
        checkpoint = self.checkpoint_rep_cls(
            cfg.artifact_file('checkpoint_path')).get()
        spec = checkpoint.spec
        if spec.ranker.vocab_size != len(corpus.vocabulary):
            raise CheckpointError(
                f'Словарь контрольной точки ({spec.ranker.vocab_size}) не '
                f'совпадает со словарем корпуса ({len(corpus.vocabulary)})')
        model = SelectAndRankModel(
            spec, corpus.vocabulary, seed=checkpoint.seed,
            embeddings=self._load_embeddings(corpus, spec.selector.kind),
            k1=cfg.bm25_k1, b=cfg.bm25_b)
        if set(model.store) != set(checkpoint.arrays):
            missing = sorted(set(model.store) ^ set(checkpoint.arrays))
            raise CheckpointError(f'Параметры не совпадают: {missing[:5]}')
        model.store.load(checkpoint.arrays)
        logging.info(f'Загружена модель: режим {spec.mode}, селектор '
                     f'{spec.selector.kind}')
        return model

    @staticmethod
    def _print_summary(title: str, *blocks: str) -> None:
        print('*' * 20)
        print(title, *blocks, sep=SEPARATOR)
        print('*' * 20)


class IngestWorkflow(AbstractWorkflow):
    """Загрузка корпуса и сохранение индекса."""

    def _run(self) -> None:
        corpus = ingest_corpus(self.run_config.input_file('corpus_path'))
        path = self.run_config.artifact_file('index_path')
        self.corpus_rep_cls(path).save(corpus)
        empty = sum(1 for document in corpus.documents
                    if not document.sentences)
        self._print_summary(
            'Итоги загрузки корпуса',
            f'Документов, шт.: {len(corpus)}\n'
            f'Пустых документов, шт.: {empty}\n'
            f'Размер словаря, шт.: {len(corpus.vocabulary)}\n'
            f'Средняя длина документа, токенов: '
            f'{corpus.vocabulary.average_document_length:.1f}',
            f'Индекс сохранен в файл:\n{path}')


class RetrieveWorkflow(AbstractWorkflow):
    """Первая стадия: BM25 top-N по каждому запросу."""

    def _run(self) -> None:
        cfg = self.run_config
        corpus = self._load_corpus()
        queries = self._load_queries(corpus)
        retriever = Bm25Retriever(build_index(corpus), cfg.bm25_k1, cfg.bm25_b)
        rankings = {}
        for query_id in sorted(queries):
            results = retriever.retrieve(queries[query_id], cfg.depth)
            if results:
                rankings[query_id] = tuple(
                    RunEntry(doc_id=doc_id, score=score)
                    for doc_id, score in results)
        path = cfg.artifact_file('run_in_path')
        self.run_rep_cls(path).save(RunFile(tag=cfg.run_tag,
                                            rankings=rankings))
        self._print_summary(
            'Итоги первой стадии',
            f'Запросов, шт.: {len(queries)}\n'
            f'Запросов с результатами, шт.: {len(rankings)}\n'
            f'Глубина выдачи: {cfg.depth}',
            f'Выдача сохранена в файл:\n{path}')


class TrainWorkflow(AbstractWorkflow):
    """Обучение модели в одном из трех режимов."""

    def _run(self) -> None:
        cfg = self.run_config
        train_config = cfg.train_config()
        corpus = self._load_corpus()
        queries = self._load_queries(corpus)
        qrels = TrecQrelsRepository(cfg.input_file('qrels_path')).get()
        run = self._load_run()

        spec = cfg.model_spec(len(corpus.vocabulary))
        model = SelectAndRankModel(
            spec, corpus.vocabulary, seed=cfg.seed,
            embeddings=self._load_embeddings(corpus, spec.selector.kind),
            k1=cfg.bm25_k1, b=cfg.bm25_b)
        if cfg.init_checkpoint is not None:
            initial = self.checkpoint_rep_cls(
                cfg.artifact_file('init_checkpoint')).get()
            model.store.load({name: array for name, array
                              in initial.arrays.items()
                              if name in model.store})
            logging.info(f'Начальные веса загружены из {cfg.init_checkpoint}')

        usable = [query_id for query_id in run.rankings
                  if query_id in queries and query_id in qrels.judgments]
        pretrain_selector = (train_config.mode == 'pipeline'
                             and spec.selector.trainable)
        train_ids, validation_ids, selector_ids = split_queries(
            usable, cfg.validation_fraction,
            cfg.selector_fraction if pretrain_selector else 0.0, cfg.seed)

        trainer = TRAINERS[train_config.mode](
            model, corpus, queries, qrels, run, train_config,
            train_ids, validation_ids, selector_ids)
        report = trainer.train()

        checkpoint_path = cfg.artifact_file('checkpoint_path')
        self.checkpoint_rep_cls(checkpoint_path).save(Checkpoint(
            spec=spec, seed=cfg.seed, arrays=model.store.snapshot()))
        log_path = cfg.artifact_file('training_log_path')
        JsonLinesRepository(log_path, TrainingLogRecord).add_all(
            trainer.log_records)
        self._print_summary(
            'Итоги обучения',
            f'Режим: {train_config.mode}, селектор: {train_config.selector}\n'
            f'Шагов всего, шт.: {report.steps_total}\n'
            f'Пропущено шагов, шт.: {report.steps_skipped}\n'
            f'Размечено предложений для селектора, шт.: '
            f'{report.selector_pairs}\n'
            f'Лучшая эпоха: {report.best_epoch}, MAP на валидации: '
            f'{report.best_validation_map:.4f}',
            f'Контрольная точка:\n{checkpoint_path}\n'
            f'Журнал обучения:\n{log_path}')


class AbstractQueryWorkflow(AbstractWorkflow):
    """Команда, обрабатывающая запросы выдачи в несколько воркеров.
    Результаты собираются по запросам и выводятся в порядке выдачи
    независимо от порядка завершения."""

    def __init__(self, run_config: RunConfig, **kwargs) -> None:
        super().__init__(run_config, **kwargs)
        self._queue: asyncio.Queue | None = None
        self._results: dict = {}
        self._report = RankingReport()

    def _process_queries(self, query_ids: list[str],
                         handler: Callable[[str], object]) -> dict:
        self._results = {}
        self._report = RankingReport(queries_total=len(query_ids))
        asyncio.run(self._run_workers(query_ids, handler))
        if self._report.queries_fail:
            raise RankerError(
                f'Не удалось обработать запросов: '
                f'{self._report.queries_fail} '
                f'({", ".join(self._report.queries_fail_list[:5])})')
        return {query_id: self._results[query_id] for query_id in query_ids}

    async def _run_workers(self, query_ids, handler) -> None:
        """Создает очередь запросов и запускает воркеров."""
        self._queue = asyncio.Queue()
        for query_id in query_ids:
            self._queue.put_nowait(query_id)
        tasks = [asyncio.create_task(self._worker(f'worker-{idx}', handler))
                 for idx in range(min(len(query_ids),
                                      self.run_config.workers))]
        await self._queue.join()
        for task in tasks:
            task.cancel()
        await asyncio.gather(*tasks, return_exceptions=True)

    async def _worker(self, worker_name: str, handler) -> None:
        while True:
            query_id = await self._queue.get()
            try:
                self._results[query_id] = await asyncio.to_thread(
                    handler, query_id)
                self._report.queries_success += 1
            except Exception as e:
                logging.exception(f'{worker_name}: не удалось обработать '
                                  f'запрос {query_id}: {e}')
                self._report.queries_fail += 1
                self._report.queries_fail_list.append(query_id)
            self._queue.task_done()

    def _statistics(self) -> str:
        return (f'Запросов всего, шт.: {self._report.queries_total}\n'
                f'Успешно обработаны, шт.: {self._report.queries_success}\n'
                f'Ошибка при обработке, шт.: {self._report.queries_fail}')

    def _query(self, queries: dict[str, Query], query_id: str) -> Query:
        try:
            return queries[query_id]
        except KeyError:
            raise RankerError(f'Запрос {query_id} не найден в файле '
                              'запросов') from None


class RankWorkflow(AbstractQueryWorkflow):
    """Переранжирование выдачи первой стадии; при заданном k_sweep -
    по одной выдаче на каждое k."""

    def _run(self) -> None:
        cfg = self.run_config
        corpus = self._load_corpus()
        queries = self._load_queries(corpus)
        run_in = self._load_run()
        model = self._load_model(corpus)
        base_path = cfg.artifact_file('run_out_path')
        paths = []
        for k in cfg.k_sweep or (cfg.k,):
            def handler(query_id: str, k: int = k):
                return tuple(
                    RunEntry(doc_id=doc_id, score=score)
                    for doc_id, score in rank_candidates(
                        model, self._query(queries, query_id), corpus,
                        run_in.doc_ids(query_id), k, cfg.head_limit))
            rankings = self._process_queries(sorted(run_in.rankings),
                                             handler)
            path = base_path if not cfg.k_sweep else Path(
                f'{base_path}.k{k}')
            self.run_rep_cls(path).save(RunFile(tag=cfg.run_tag,
                                                rankings=rankings))
            paths.append(str(path))
            logging.info(f'k={k}: выдача сохранена в {path}')
        self._print_summary('Итоги переранжирования', self._statistics(),
                            'Выдача сохранена в файл:\n' + '\n'.join(paths))


class ExplainWorkflow(AbstractQueryWorkflow):
    """Объяснения: выбранные предложения и оценка по каждой паре."""

    def __init__(self, run_config: RunConfig, query_id: str | None = None,
                 doc_id: str | None = None, **kwargs) -> None:
        super().__init__(run_config, **kwargs)
        self.query_id = query_id
        self.doc_id = doc_id

    def _run(self) -> None:
        cfg = self.run_config
        corpus = self._load_corpus()
        queries = self._load_queries(corpus)
        model = self._load_model(corpus)

        def explain(query_id: str, doc_ids) -> list[Explanation]:
            query = self._query(queries, query_id)
            return [model.explain(query, corpus.document(doc_id), cfg.k,
                                  cfg.head_limit)
                    for doc_id in doc_ids]

        if self.query_id is not None and self.doc_id is not None:
            records = explain(self.query_id, [self.doc_id])
            print(records[0].model_dump_json(indent=2))
        else:
            run_in = self._load_run()
            results = self._process_queries(
                sorted(run_in.rankings),
                lambda query_id: explain(query_id,
                                         run_in.doc_ids(query_id)))
            records = [record for items in results.values()
                       for record in items]
        path = cfg.artifact_file('explanations_path')
        JsonLinesRepository(path, Explanation).add_all(records)
        self._print_summary('Итоги объяснения',
                            f'Записей, шт.: {len(records)}',
                            f'Объяснения сохранены в файл:\n{path}')


class EvaluateWorkflow(AbstractWorkflow):
    """Метрики переранжированной выдачи по qrels."""

    def _run(self) -> None:
        cfg = self.run_config
        run = self._load_run('run_out_path')
        qrels = TrecQrelsRepository(cfg.input_file('qrels_path')).get()
        table = evaluate_run(run, qrels, cfg.cutoffs, cfg.ndcg_gain)
        path = cfg.artifact_file('report_path')
        metric_repository(path).save(table)
        means = '\n'.join(f'{name}: {table.means[name]:.4f}'
                          for name in table.metric_names)
        self._print_summary(
            'Итоги оценки',
            f'Оценено запросов, шт.: {len(table.per_query)}\n{means}',
            f'Отчет сохранен в файл:\n{path}')


class AnalyzeWorkflow(AbstractQueryWorkflow):
    """Распределение доли токенов сводки, не попавших в начало
    документа длиной head_budget. Без head_budget бюджет пары равен
    max_len - |q| - 3."""

    def _run(self) -> None:
        cfg = self.run_config
        corpus = self._load_corpus()
        queries = self._load_queries(corpus)
        run_in = self._load_run()
        model = self._load_model(corpus)

        def fractions(query_id: str) -> list[float]:
            query = self._query(queries, query_id)
            budget = cfg.head_budget
            if budget is None:
                budget = max(0, model.max_len - len(query.token_ids) - 3)
            values = []
            for doc_id in run_in.doc_ids(query_id):
                document = corpus.document(doc_id)
                _, summary = model.select(query, document, cfg.k,
                                          cfg.head_limit)
                values.append(missing_token_fraction(document, summary,
                                                     budget))
            return values

        results = self._process_queries(sorted(run_in.rankings), fractions)
        cdf = missing_token_cdf(value for values in results.values()
                                for value in values)
        path = cfg.artifact_file('analysis_path')
        TsvCdfRepository(path).save(cdf)
        self._print_summary(
            'Итоги анализа пропущенных токенов', self._statistics(),
            f'Точек распределения, шт.: {len(cdf)}',
            f'Распределение сохранено в файл:\n{path}')
