import json

import pytest
from pydantic import ValidationError

import config
from conftest import CORPUS_RECORDS, write_jsonl
from domain.exceptions import ConfigError
from interface.settings import parse_pairs, resolve_config
from main import main

QUERIES = 'q1\tcats mice\nq2\tcheese is\nq3\tyoga is\nq4\tweather is\n'
QRELS = 'q1 0 d1 1\nq1 0 d2 0\nq2 0 d2 2\nq3 0 d4 1\nq4 0 d3 1\n'
TINY_MODEL = [
    'model_dim=8', 'num_layers=1', 'num_heads=2', 'ff_dim=16', 'max_len=32',
    'dropout=0', 'selector_hidden=4', 'epochs=1', 'triples_per_epoch=4',
    'batch_size=2', 'warmup=0', 'selector_epochs=1', 'k=1', 'workers=2',
    'validation_fraction=0.25', 'selector_fraction=0.25',
]


@pytest.fixture
def directories(tmp_path, monkeypatch):
    input_dir = tmp_path / 'data_input'
    output_dir = tmp_path / 'data_output'
    input_dir.mkdir()
    monkeypatch.setattr(config, 'INPUT_DATA_DIR', input_dir)
    monkeypatch.setattr(config, 'RESULTS_DIR', output_dir)
    write_jsonl(input_dir / 'corpus.jsonl', CORPUS_RECORDS)
    (input_dir / 'queries.tsv').write_text(QUERIES, encoding='utf-8')
    (input_dir / 'qrels.txt').write_text(QRELS, encoding='utf-8')
    (input_dir / 'run.cfg').write_text(
        '# тестовый запуск\n'
        'corpus_path=corpus.jsonl\n'
        'queries_path=queries.tsv\n'
        'qrels_path=qrels.txt\n'
        + '\n'.join(TINY_MODEL) + '\n', encoding='utf-8')
    return input_dir, output_dir


def _command(name, *overrides, extra=()):
    argv = [name, '--config', 'run.cfg', *extra]
    for override in overrides:
        argv.extend(['--set', override])
    return main(argv)


def _pipeline(*overrides):
    for name in ('ingest', 'retrieve', 'train', 'rank', 'evaluate'):
        assert _command(name, *overrides) == 0, name


class TestParsePairs:

    def test_pairs(self):
        assert parse_pairs(['k = 5', '', '# comment', 'head_limit=None',
                            'run_tag=a=b'], 'test') == {
            'k': '5', 'head_limit': None, 'run_tag': 'a=b'}

    @pytest.mark.parametrize('line', ['k', '=5'])
    def test_malformed(self, line):
        with pytest.raises(ConfigError, match='строка 1'):
            parse_pairs([line], 'test')


class TestResolveConfig:

    def test_defaults(self, directories):
        run_config = resolve_config()
        assert run_config.k == config.DEFAULT_K
        assert run_config.cutoffs == config.METRIC_CUTOFFS

    def test_overrides_win_over_file(self, directories):
        run_config = resolve_config('run.cfg', ['k=7', 'cutoffs=5, 10'])
        assert run_config.k == 7
        assert run_config.model_dim == 8
        assert run_config.cutoffs == (5, 10)

    @pytest.mark.parametrize('value', ['none', 'None'])
    def test_selector_none(self, directories, value):
        run_config = resolve_config('run.cfg', ['mode=truncate',
                                                f'selector={value}'])
        assert run_config.selector == 'none'
        assert run_config.train_config().selector == 'none'
        assert run_config.model_spec(30).selector.kind == 'none'

    def test_relative_paths(self, directories):
        input_dir, output_dir = directories
        run_config = resolve_config('run.cfg')
        assert run_config.input_file('corpus_path') == \
            input_dir / 'corpus.jsonl'
        assert run_config.artifact_file('index_path') == \
            output_dir / config.INDEX_FILE_NAME

    def test_unset_input(self, directories):
        with pytest.raises(ConfigError):
            resolve_config().input_file('qrels_path')

    def test_missing_file(self, directories):
        with pytest.raises(ConfigError):
            resolve_config('absent.cfg')

    @pytest.mark.parametrize('override', [
        'unknown_key=1',
        'k=0',
        'mode=joint',
        'validation_fraction=0.6',
    ])
    def test_rejected(self, directories, override):
        with pytest.raises(ValidationError):
            resolve_config('run.cfg', [override])

    def test_e2e_requires_trainable_selector(self, directories):
        run_config = resolve_config('run.cfg', ['selector=bm25'])
        with pytest.raises(ValidationError):
            run_config.train_config()

    def test_shared_embedding_only_in_e2e(self, directories):
        e2e = resolve_config('run.cfg').model_spec(30)
        pipeline = resolve_config('run.cfg', ['mode=pipeline']).model_spec(30)
        assert e2e.selector.embedding_name == 'embedding'
        assert pipeline.selector.embedding_name == 'selector.embedding'


class TestCommandLine:

    def test_full_pipeline(self, directories, capsys):
        _, output_dir = directories
        _pipeline()
        assert (output_dir / config.CHECKPOINT_NAME).exists()
        first = (output_dir / config.FIRST_STAGE_RUN_NAME).read_text()
        reranked = (output_dir / config.RERANKED_RUN_NAME).read_text()

        def documents(text):
            pairs = {}
            for line in text.splitlines():
                query_id, _, doc_id, *_ = line.split()
                pairs.setdefault(query_id, set()).add(doc_id)
            return pairs

        assert documents(first) == documents(reranked)
        assert documents(first)['q1'] == {'d1', 'd2'}
        report = (output_dir / config.REPORT_NAME).read_text().splitlines()
        assert report[0] == 'query\tmap\tndcg@10\tndcg@20\tmrr'
        assert report[-1].startswith('all\t')
        log = (output_dir / config.TRAINING_LOG_NAME).read_text()
        assert any('validation_map' in json.loads(line)
                   and json.loads(line)['validation_map'] is not None
                   for line in log.splitlines())
        assert 'Итоги оценки' in capsys.readouterr().out

    @pytest.mark.parametrize('mode, selector', [
        ('truncate', 'none'),
        ('pipeline', 'linear'),
        ('pipeline', 'bm25'),
        ('e2e', 'attentive'),
    ])
    def test_training_modes(self, directories, mode, selector):
        _pipeline(f'mode={mode}', f'selector={selector}')

    def test_explain_single_pair(self, directories):
        _, output_dir = directories
        _command('ingest')
        _command('retrieve')
        _command('train')
        assert _command('explain', extra=['--qid', 'q1',
                                          '--docid', 'd1']) == 0
        lines = (output_dir / config.EXPLANATIONS_NAME).read_text(
            encoding='utf-8').splitlines()
        record = json.loads(lines[0])
        assert len(lines) == 1
        assert record['doc_id'] == 'd1'
        assert sum(item['selected'] for item in record['sentences']) == 1

    def test_explain_run(self, directories):
        _, output_dir = directories
        for name in ('ingest', 'retrieve', 'train', 'explain'):
            assert _command(name) == 0
        first = (output_dir / config.FIRST_STAGE_RUN_NAME).read_text()
        lines = (output_dir / config.EXPLANATIONS_NAME).read_text(
            encoding='utf-8').splitlines()
        assert len(lines) == len(first.splitlines())

    def test_analyze(self, directories):
        _, output_dir = directories
        for name in ('ingest', 'retrieve', 'train'):
            _command(name)
        assert _command('analyze', 'head_budget=3') == 0
        lines = (output_dir / config.ANALYSIS_NAME).read_text().splitlines()
        assert lines[0] == 'fraction\tcumulative'
        assert lines[-1].endswith('\t1.000000')

    def test_k_sweep(self, directories):
        _, output_dir = directories
        for name in ('ingest', 'retrieve', 'train'):
            _command(name)
        assert _command('rank', 'k_sweep=1,2') == 0
        for k in (1, 2):
            assert (output_dir / f'{config.RERANKED_RUN_NAME}.k{k}').exists()

    def test_excel_report(self, directories):
        _, output_dir = directories
        _pipeline('report_path=metrics.xlsx')
        assert (output_dir / 'metrics.xlsx').exists()

    def test_deterministic(self, directories, tmp_path, monkeypatch):
        outputs = []
        for name in ('first', 'second'):
            output_dir = tmp_path / name
            monkeypatch.setattr(config, 'RESULTS_DIR', output_dir)
            _pipeline()
            outputs.append({
                file_name: (output_dir / file_name).read_bytes()
                for file_name in (config.FIRST_STAGE_RUN_NAME,
                                  config.RERANKED_RUN_NAME,
                                  config.TRAINING_LOG_NAME,
                                  config.CHECKPOINT_NAME,
                                  config.REPORT_NAME)
            })
        assert outputs[0] == outputs[1]

    def test_e2e_with_fixed_selector_fails(self, directories):
        _command('ingest')
        _command('retrieve')
        assert _command('train', 'selector=bm25') == 1

    def test_missing_index(self, directories):
        assert _command('retrieve') == 1

    def test_missing_input(self, directories):
        assert _command('ingest', 'corpus_path=absent.jsonl') == 1

    def test_missing_checkpoint(self, directories):
        _command('ingest')
        _command('retrieve')
        assert _command('rank') == 1

    def test_unknown_setting(self, directories):
        assert _command('ingest', 'corpus=corpus.jsonl') == 1

    def test_qid_without_docid(self, directories):
        with pytest.raises(SystemExit):
            main(['explain', '--qid', 'q1'])
