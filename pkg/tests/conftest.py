import json

import numpy as np
import pytest

from domain.autodiff import ParameterStore
from domain.models import (Document, Query, RankerConfig, SelectorConfig,
                           Sentence)
from domain.text import ingest_corpus

CORPUS_RECORDS = (
    {'doc_id': 'd1', 'text': 'Cats chase mice. Dogs chase cats! Birds sing.'},
    {'doc_id': 'd2', 'text': 'Mice eat cheese. Cheese is yellow.'},
    {'doc_id': 'd3', 'text': 'The weather is sunny today.'},
    {'doc_id': 'd4', 'text': 'Yoga is hot? Bikram yoga is 105 degrees.'},
)


def write_jsonl(path, records) -> None:
    with open(path, 'w', encoding='utf-8') as file:
        for record in records:
            file.write(json.dumps(record) + '\n')


def make_document(doc_id: str, token_lists) -> Document:
    """Документ из списков идентификаторов токенов по предложениям."""
    return Document.from_sentences(doc_id, [
        Sentence(text=' '.join(map(str, tokens)), token_ids=tuple(tokens))
        for tokens in token_lists
    ])


def make_query(token_ids, query_id: str = 'q') -> Query:
    return Query(query_id=query_id, text='', token_ids=tuple(token_ids))


@pytest.fixture
def corpus_file(tmp_path):
    path = tmp_path / 'corpus.jsonl'
    write_jsonl(path, CORPUS_RECORDS)
    return path


@pytest.fixture
def corpus(corpus_file):
    return ingest_corpus(corpus_file)


@pytest.fixture
def vocabulary(corpus):
    return corpus.vocabulary


@pytest.fixture
def rng():
    return np.random.default_rng(7)


@pytest.fixture
def store():
    return ParameterStore()


@pytest.fixture
def ranker_config(vocabulary):
    return RankerConfig(vocab_size=len(vocabulary), model_dim=8,
                        num_layers=1, num_heads=2, ff_dim=16, max_len=32,
                        dropout=0.0)


@pytest.fixture
def selector_config():
    return SelectorConfig(kind='linear', embedding_name='embedding',
                          embedding_dim=8, hidden_size=4)
