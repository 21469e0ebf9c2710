import numpy as np
import pytest
from numpy.testing import assert_array_equal

from conftest import make_document, make_query
from domain import autodiff as ad
from domain.exceptions import RankerError
from domain.models import RankerInput
from domain.ranker import (TransformerRanker, assemble_input,
                           summary_token_weights)
from domain.selectors import full_summary, summary_from_indices

DOCUMENT = make_document('d', [[10, 11], [12], [13, 14, 15], [16, 17]])


@pytest.fixture
def ranker(store, ranker_config, rng):
    return TransformerRanker(store, ranker_config, rng)


def _random_input(rng, vocabulary, max_len=32) -> RankerInput:
    sentences = [rng.integers(4, len(vocabulary),
                              size=int(rng.integers(1, 6))).tolist()
                 for _ in range(int(rng.integers(1, 6)))]
    document = make_document('r', sentences)
    query = make_query(rng.integers(4, len(vocabulary), size=2).tolist())
    return assemble_input(query, full_summary(document), max_len, vocabulary)


class TestAssembleInput:

    def test_bracketing(self, vocabulary):
        summary = summary_from_indices(DOCUMENT, [0, 1], 2)
        ranker_input = assemble_input(make_query([4, 5]), summary, 32,
                                      vocabulary)
        assert ranker_input.length == 8
        assert ranker_input.token_ids == (vocabulary.cls_id, 4, 5,
                                          vocabulary.sep_id, 10, 11, 12,
                                          vocabulary.sep_id)
        assert ranker_input.sentence_origins == (None, None, None, None,
                                                 0, 0, 1, None)

    def test_empty_summary(self, vocabulary):
        summary = summary_from_indices(DOCUMENT, [], 1)
        ranker_input = assemble_input(make_query([4, 5]), summary, 32,
                                      vocabulary)
        assert ranker_input.token_ids == (vocabulary.cls_id, 4, 5,
                                          vocabulary.sep_id,
                                          vocabulary.sep_id)
        assert ranker_input.sentence_origins == (None,) * 5

    def test_tail_truncation(self, vocabulary):
        summary = full_summary(DOCUMENT)
        ranker_input = assemble_input(make_query([4]), summary, 8,
                                      vocabulary)
        assert ranker_input.length == 8
        assert ranker_input.token_ids[3:7] == (10, 11, 12, 13)
        assert ranker_input.sentence_origins == (None, None, None, 0, 0, 1,
                                                 2, None)

    def test_query_too_long(self, vocabulary):
        with pytest.raises(RankerError):
            assemble_input(make_query([4] * 6), full_summary(DOCUMENT), 8,
                           vocabulary)

    def test_sentence_order_is_observable(self, vocabulary):
        swapped = make_document('s', [[12], [10, 11], [13, 14, 15],
                                      [16, 17]])
        query = make_query([4])
        first = assemble_input(query, full_summary(DOCUMENT), 32, vocabulary)
        second = assemble_input(query, full_summary(swapped), 32, vocabulary)
        assert first.token_ids != second.token_ids
        assert sorted(first.token_ids) == sorted(second.token_ids)


def test_summary_token_weights(vocabulary):
    summary = summary_from_indices(DOCUMENT, [0, 2], 2)
    ranker_input = assemble_input(make_query([4]), summary, 32, vocabulary)
    weights = summary_token_weights(
        ranker_input, ad.as_tensor([0.1, 0.2, 0.3, 0.4]))
    assert_array_equal(weights.data,
                       [1, 1, 1, 0.1, 0.1, 0.3, 0.3, 0.3, 1])


class TestTransformerRanker:

    def test_score_in_unit_interval(self, ranker, vocabulary, rng):
        for _ in range(10):
            score = ranker.score(_random_input(rng, vocabulary))
            assert 0.0 < score < 1.0

    def test_inference_is_deterministic(self, ranker, vocabulary, rng):
        ranker_input = _random_input(rng, vocabulary)
        assert ranker.score(ranker_input) == ranker.score(ranker_input)

    def test_parameter_names(self, ranker, store):
        assert 'embedding' in store
        assert 'ranker.position' in store
        assert 'ranker.head.weight' in store
        assert all(name == 'embedding' or name.startswith('ranker.')
                   for name in store)

    def test_rejects_unknown_tokens(self, ranker, vocabulary):
        ranker_input = RankerInput(token_ids=(2, 99, 3),
                                   sentence_origins=(None,) * 3, length=3)
        with pytest.raises(RankerError):
            ranker.score(ranker_input)

    def test_rejects_overlong_input(self, ranker, vocabulary):
        ranker_input = RankerInput(token_ids=(4,) * 40,
                                   sentence_origins=(None,) * 40, length=40)
        with pytest.raises(RankerError):
            ranker.score(ranker_input)

    def test_training_dropout_needs_generator(self, store, ranker_config,
                                              vocabulary, rng):
        config = ranker_config.model_copy(update={'dropout': 0.1})
        ranker = TransformerRanker(store, config, rng)
        with pytest.raises(RankerError):
            ranker.score_graph(_random_input(rng, vocabulary), training=True)

    def test_straight_through_keeps_forward_value(self, ranker, vocabulary,
                                                  rng):
        for _ in range(100):
            ranker_input = _random_input(rng, vocabulary)
            weights = ad.as_tensor(rng.random(ranker_input.length))
            plain = ranker.score_graph(ranker_input)
            scaled = ranker.score_graph(ranker_input, weights, training=True,
                                        rng=rng)
            assert_array_equal(plain.data, scaled.data)

    def test_gradient_reaches_sentence_weights(self, ranker, store,
                                               vocabulary):
        document = make_document('two', [[10, 11, 12], [13, 14]])
        summary = full_summary(document)
        ranker_input = assemble_input(make_query([4, 5]), summary, 32,
                                      vocabulary)
        sentence_weights = ad.Tensor([0.6, 0.3], requires_grad=True)
        weights = summary_token_weights(ranker_input, sentence_weights)
        ad.backward(ranker.score_graph(ranker_input, weights))
        assert np.all(sentence_weights.grad != 0)
