import numpy as np
import openpyxl
import pytest
from numpy.testing import assert_array_equal

from domain.exceptions import CheckpointError, CorpusError, TrecFormatError
from domain.models import (Explanation, ExplainedSentence, MetricTable,
                           ModelSpec, RunEntry, RunFile, SelectorConfig,
                           TrainingLogRecord)
from repository.checkpoints import BinaryCheckpointRepository, Checkpoint
from repository.corpus import CorpusJsonRepository
from repository.reports import (ExcelMetricRepository, JsonLinesRepository,
                                TsvCdfRepository, TsvMetricRepository,
                                metric_repository)
from repository.trec import (TrecQrelsRepository, TrecRunRepository,
                             TsvQueryRepository)


@pytest.fixture
def table():
    return MetricTable(
        metric_names=('map', 'ndcg@10', 'mrr'),
        per_query={'q1': {'map': 1.0, 'ndcg@10': 1.0, 'mrr': 1.0},
                   'q2': {'map': 0.5, 'ndcg@10': 0.63093, 'mrr': 0.5}},
        means={'map': 0.75, 'ndcg@10': 0.815465, 'mrr': 0.75},
    )


class TestCorpusRepository:

    def test_round_trip(self, tmp_path, corpus):
        repository = CorpusJsonRepository(tmp_path / 'corpus.index')
        repository.save(corpus)
        loaded = repository.get()
        assert loaded.model_dump() == corpus.model_dump()
        assert loaded.ordinal('d3') == 2

    def test_missing_index(self, tmp_path):
        with pytest.raises(CorpusError, match='ingest'):
            CorpusJsonRepository(tmp_path / 'absent.index').get()

    def test_damaged_index(self, tmp_path):
        path = tmp_path / 'corpus.index'
        path.write_text('{"documents": 1}', encoding='utf-8')
        with pytest.raises(CorpusError):
            CorpusJsonRepository(path).get()


class TestRunRepository:

    def test_round_trip(self, tmp_path):
        run = RunFile(tag='s-and-r', rankings={
            'q2': (RunEntry(doc_id='b', score=0.1 + 0.2),
                   RunEntry(doc_id='a', score=-1.5)),
            'q1': (RunEntry(doc_id='c', score=3.0),),
        })
        repository = TrecRunRepository(tmp_path / 'run.txt')
        repository.save(run)
        assert repository.get() == run
        lines = (tmp_path / 'run.txt').read_text().splitlines()
        assert lines[0] == 'q2 Q0 b 1 0.30000000000000004 s-and-r'

    def test_ranks_sorted_on_read(self, tmp_path):
        path = tmp_path / 'run.txt'
        path.write_text('q1 Q0 b 2 1.0 t\nq1 Q0 a 1 2.0 t\n')
        run = TrecRunRepository(path).get()
        assert run.doc_ids('q1') == ['a', 'b']
        assert run.tag == 't'

    @pytest.mark.parametrize('content', [
        'q1 Q0 a 1 2.0\n',
        'q1 Q0 a one 2.0 t\n',
        'q1 Q0 a 1 2.0 t\nq1 Q0 b 3 1.0 t\n',
        'q1 Q0 a 1 1.0 t\nq1 Q0 b 2 2.0 t\n',
    ])
    def test_malformed(self, tmp_path, content):
        path = tmp_path / 'run.txt'
        path.write_text(content)
        with pytest.raises(TrecFormatError):
            TrecRunRepository(path).get()

    def test_missing_file(self, tmp_path):
        with pytest.raises(TrecFormatError):
            TrecRunRepository(tmp_path / 'absent.txt').get()


class TestQrelsRepository:

    def test_read(self, tmp_path):
        path = tmp_path / 'qrels.txt'
        path.write_text('q1 0 a 1\n\nq1 0 b 0\nq2 0 c 2\n')
        qrels = TrecQrelsRepository(path).get()
        assert qrels.judgments == {'q1': {'a': 1, 'b': 0}, 'q2': {'c': 2}}
        assert qrels.relevant_count('q1') == 1

    @pytest.mark.parametrize('content', [
        'q1 0 a\n',
        'q1 0 a high\n',
        'q1 0 a 1\nq1 0 a 0\n',
        'q1 0 a -1\n',
    ])
    def test_malformed(self, tmp_path, content):
        path = tmp_path / 'qrels.txt'
        path.write_text(content)
        with pytest.raises(TrecFormatError):
            TrecQrelsRepository(path).get()


class TestQueryRepository:

    def test_read(self, tmp_path, vocabulary):
        path = tmp_path / 'queries.tsv'
        path.write_text('q1\tCats and mice\nq2\tYOGA\n', encoding='utf-8')
        queries = TsvQueryRepository(path).get_all(vocabulary)
        assert list(queries) == ['q1', 'q2']
        assert queries['q1'].token_ids == (4, vocabulary.unk_id, 6)
        assert queries['q2'].token_ids == (18,)

    @pytest.mark.parametrize('content', [
        'q1\n',
        'q1\tcats\tmice\n',
        'q1\tcats\nq1\tmice\n',
    ])
    def test_malformed(self, tmp_path, vocabulary, content):
        path = tmp_path / 'queries.tsv'
        path.write_text(content, encoding='utf-8')
        with pytest.raises(TrecFormatError):
            TsvQueryRepository(path).get_all(vocabulary)


class TestCheckpointRepository:

    def _checkpoint(self, ranker_config, rng):
        spec = ModelSpec(mode='e2e', selector=SelectorConfig(embedding_dim=8),
                         ranker=ranker_config)
        return Checkpoint(spec=spec, seed=3, arrays={
            'ranker.head.weight': rng.normal(size=(8, 1)),
            'embedding': rng.normal(size=(23, 8)),
            'ranker.head.bias': np.array([0.25]),
        })

    def test_round_trip(self, tmp_path, ranker_config, rng):
        checkpoint = self._checkpoint(ranker_config, rng)
        repository = BinaryCheckpointRepository(tmp_path / 'model.ckpt')
        repository.save(checkpoint)
        loaded = repository.get()
        assert loaded.spec == checkpoint.spec
        assert loaded.seed == 3
        assert set(loaded.arrays) == set(checkpoint.arrays)
        for name, array in checkpoint.arrays.items():
            assert loaded.arrays[name].dtype == np.float64
            assert_array_equal(loaded.arrays[name],
                               array.astype(np.float32))

    def test_saved_twice_is_identical(self, tmp_path, ranker_config, rng):
        checkpoint = self._checkpoint(ranker_config, rng)
        first = tmp_path / 'first.ckpt'
        second = tmp_path / 'second.ckpt'
        BinaryCheckpointRepository(first).save(checkpoint)
        BinaryCheckpointRepository(second).save(checkpoint)
        assert first.read_bytes() == second.read_bytes()

    def test_truncated_payload(self, tmp_path, ranker_config, rng):
        path = tmp_path / 'model.ckpt'
        BinaryCheckpointRepository(path).save(
            self._checkpoint(ranker_config, rng))
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(CheckpointError):
            BinaryCheckpointRepository(path).get()

    def test_truncated_header(self, tmp_path, ranker_config, rng):
        path = tmp_path / 'model.ckpt'
        BinaryCheckpointRepository(path).save(
            self._checkpoint(ranker_config, rng))
        path.write_bytes(path.read_bytes()[:40])
        with pytest.raises(CheckpointError):
            BinaryCheckpointRepository(path).get()

    def test_missing(self, tmp_path):
        with pytest.raises(CheckpointError):
            BinaryCheckpointRepository(tmp_path / 'absent.ckpt').get()


class TestMetricRepositories:

    def test_tsv(self, tmp_path, table):
        path = tmp_path / 'metrics.tsv'
        TsvMetricRepository(path).save(table)
        assert path.read_text().splitlines() == [
            'query\tmap\tndcg@10\tmrr',
            'q1\t1.0000\t1.0000\t1.0000',
            'q2\t0.5000\t0.6309\t0.5000',
            'all\t0.7500\t0.8155\t0.7500',
        ]

    def test_excel(self, tmp_path, table):
        path = tmp_path / 'metrics.xlsx'
        ExcelMetricRepository(path).save(table)
        workbook = openpyxl.load_workbook(path)
        worksheet = workbook['metrics']
        assert [cell.value for cell in worksheet[1]] == [
            'Запрос', 'map', 'ndcg@10', 'mrr']
        assert worksheet.cell(4, 1).value == 'all'
        assert worksheet.cell(4, 2).value == 0.75
        assert worksheet.cell(1, 3).font.bold
        assert worksheet.cell(4, 1).font.bold
        assert not worksheet.cell(2, 1).font.bold
        workbook.close()

    @pytest.mark.parametrize('name, expected', [
        ('metrics.xlsx', ExcelMetricRepository),
        ('metrics.XLSX', ExcelMetricRepository),
        ('metrics.tsv', TsvMetricRepository),
        ('metrics', TsvMetricRepository),
    ])
    def test_choice_by_suffix(self, tmp_path, name, expected):
        assert isinstance(metric_repository(tmp_path / name), expected)


class TestJsonLinesRepository:

    def test_training_log(self, tmp_path):
        records = [
            TrainingLogRecord(epoch=1, step=1, loss=0.2, lr=1e-5),
            TrainingLogRecord(epoch=1, validation_map=0.5),
        ]
        repository = JsonLinesRepository(tmp_path / 'log.jsonl',
                                         TrainingLogRecord)
        repository.add_all(records)
        assert repository.get_all() == records
        assert len((tmp_path / 'log.jsonl').read_text().splitlines()) == 2

    def test_explanations_keep_unicode(self, tmp_path):
        explanation = Explanation(query_id='q', doc_id='d', score=0.5,
                                  sentences=[ExplainedSentence(
                                      index=0, text='Кошки ловят мышей.',
                                      logit=None, probability=None,
                                      selected=True)])
        repository = JsonLinesRepository(tmp_path / 'explain.jsonl',
                                         Explanation)
        repository.add_all([explanation])
        assert repository.get_all() == [explanation]


def test_cdf_tsv(tmp_path):
    path = tmp_path / 'cdf.tsv'
    TsvCdfRepository(path).save([(0.0, 0.4), (2 / 3, 1.0)])
    assert path.read_text().splitlines() == [
        'fraction\tcumulative', '0.000000\t0.400000', '0.666667\t1.000000']
