import math

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from conftest import make_document, make_query
from domain import autodiff as ad
from domain.autodiff import gradient_check
from domain.models import ModelSpec, SelectorConfig, TrainConfig
from domain.reranker import SelectAndRankModel
from domain.sampling import draw_uniforms
from domain.selectors import full_summary, summary_from_indices
from domain.training import batch_loss, hinge_loss

DOCUMENTS = (
    make_document('a', [[10, 11, 12], [4, 5], [13], [14, 15, 16]]),
    make_document('b', [[17, 18], [19, 20, 21], [4, 22], [10]]),
    make_document('c', [[5, 6, 7], [8], [9, 10, 11], [12, 13]]),
    make_document('e', [[14], [15, 16], [17, 18, 19], [4, 20]]),
)


def _model(vocabulary, ranker_config, mode='e2e', kind='linear', seed=3):
    spec = ModelSpec(
        mode=mode,
        selector=SelectorConfig(kind=kind, embedding_name='embedding',
                                embedding_dim=ranker_config.model_dim,
                                hidden_size=4),
        ranker=ranker_config,
    )
    return SelectAndRankModel(spec, vocabulary, seed=seed)


def _random_document(rng, vocabulary, doc_id):
    sentences = [rng.integers(4, len(vocabulary),
                              size=int(rng.integers(1, 5))).tolist()
                 for _ in range(int(rng.integers(1, 7)))]
    return make_document(doc_id, sentences)


class TestInference:

    def test_truncation_model_reads_whole_document(self, vocabulary,
                                                   ranker_config):
        model = _model(vocabulary, ranker_config, mode='truncate')
        assert model.selector is None
        query = make_query([4, 5])
        scores, summary = model.select(query, DOCUMENTS[0], 2)
        assert scores is None
        assert summary == full_summary(DOCUMENTS[0])
        assert model.score(query, DOCUMENTS[0], 2) == model.score_summary(
            query, full_summary(DOCUMENTS[0]))

    def test_selection_size(self, vocabulary, ranker_config):
        model = _model(vocabulary, ranker_config, mode='pipeline',
                       kind='bm25')
        query = make_query([4, 5])
        _, summary = model.select(query, DOCUMENTS[0], 2)
        assert len(summary.indices) == 2
        assert 1 in summary.indices

    def test_large_k_equals_no_selection(self, vocabulary, ranker_config):
        model = _model(vocabulary, ranker_config)
        truncation = _model(vocabulary, ranker_config, mode='truncate')
        truncation.store.load({name: model.store.get(name).data
                               for name in truncation.store})
        query = make_query([4, 5])
        for document in DOCUMENTS:
            assert model.score(query, document, 10) == \
                truncation.score(query, document, 10)

    def test_head_limit(self, vocabulary, ranker_config):
        model = _model(vocabulary, ranker_config)
        _, summary = model.select(make_query([4]), DOCUMENTS[1], 3,
                                  head_limit=2)
        assert summary.indices == (0, 1)

    def test_random_selection_depends_only_on_pair(self, vocabulary,
                                                   ranker_config):
        model = _model(vocabulary, ranker_config, mode='pipeline',
                       kind='random')
        query = make_query([4], query_id='q1')
        first = model.sentence_scores(query, DOCUMENTS[2])
        model.sentence_scores(query, DOCUMENTS[3])
        assert model.sentence_scores(query, DOCUMENTS[2]) == first
        other = model.sentence_scores(make_query([4], query_id='q2'),
                                      DOCUMENTS[2])
        assert other != first


class TestExplain:

    def test_record(self, vocabulary, ranker_config):
        model = _model(vocabulary, ranker_config)
        query = make_query([4, 12])
        document = DOCUMENTS[0]
        explanation = model.explain(query, document, 2)
        scores = model.sentence_scores(query, document)
        assert len(explanation.selected_indices) == 2
        assert [item.logit for item in explanation.sentences] == list(
            scores.logits)
        assert math.fsum(item.probability
                         for item in explanation.sentences) == \
            pytest.approx(1.0)
        assert [item.text for item in explanation.sentences] == [
            sentence.text for sentence in document.sentences]

    def test_selected_sentences_reproduce_score(self, vocabulary,
                                                ranker_config, rng):
        model = _model(vocabulary, ranker_config)
        for index in range(50):
            document = _random_document(rng, vocabulary, f'r{index}')
            query = make_query(rng.integers(4, len(vocabulary),
                                            size=2).tolist())
            explanation = model.explain(query, document, 3)
            summary = summary_from_indices(
                document, explanation.selected_indices, 3)
            assert explanation.score == model.score_summary(query, summary)
            assert explanation.score == model.score(query, document, 3)
            assert len(explanation.selected_indices) == min(
                3, len(document.sentences))

    def test_without_selector(self, vocabulary, ranker_config):
        model = _model(vocabulary, ranker_config, mode='truncate')
        explanation = model.explain(make_query([4]), DOCUMENTS[0], 2)
        assert all(item.logit is None and item.probability is None
                   for item in explanation.sentences)
        assert all(item.selected for item in explanation.sentences)

    def test_empty_sentence_has_no_logit(self, vocabulary, ranker_config):
        model = _model(vocabulary, ranker_config)
        document = make_document('g', [[4, 5], [], [6]])
        explanation = model.explain(make_query([4]), document, 3)
        assert explanation.sentences[1].logit is None
        assert explanation.sentences[1].probability == 0.0
        assert explanation.selected_indices == [0, 2]


class TestTrainingScore:

    train_config = TrainConfig(mode='e2e', selector='linear', k=2,
                               temperature=1.0, margin=1.0)

    def test_forward_equals_hard_summary_score(self, vocabulary,
                                               ranker_config):
        model = _model(vocabulary, ranker_config)
        query = make_query([4, 5])
        uniforms = np.full(4, 0.5)
        score = model.training_score(query, DOCUMENTS[0], self.train_config,
                                     np.random.default_rng(0),
                                     training=False, uniforms=uniforms)
        logits = model.selector.score_graph(query, DOCUMENTS[0]).data
        top = tuple(sorted(np.argsort(-logits, kind='stable')[:2].tolist()))
        summary = summary_from_indices(DOCUMENTS[0], top, 2)
        assert score.item() == model.score_summary(query, summary)

    def test_k_covering_document_equals_full_document(self, vocabulary,
                                                      ranker_config, rng):
        model = _model(vocabulary, ranker_config)
        train_config = self.train_config.model_copy(update={'k': 10})
        query = make_query([4, 5])
        for document in DOCUMENTS:
            score = model.training_score(query, document, train_config, rng,
                                         training=False)
            assert score.item() == model.score_summary(
                query, full_summary(document))

    def test_non_e2e_modes_ignore_selector(self, vocabulary, ranker_config,
                                           rng):
        model = _model(vocabulary, ranker_config, mode='pipeline')
        train_config = TrainConfig(mode='pipeline', selector='linear')
        query = make_query([4])
        score = model.training_score(query, DOCUMENTS[1], train_config, rng,
                                     training=False)
        assert score.item() == model.score_summary(
            query, full_summary(DOCUMENTS[1]))

    def test_head_limit_restricts_sampling(self, vocabulary, ranker_config,
                                           rng):
        model = _model(vocabulary, ranker_config)
        train_config = self.train_config.model_copy(
            update={'head_limit': 1})
        query = make_query([4])
        score = model.training_score(query, DOCUMENTS[2], train_config, rng,
                                     training=False)
        assert score.item() == model.score_summary(
            query, summary_from_indices(DOCUMENTS[2], [0], 2))

    def test_document_without_sentences(self, vocabulary, ranker_config,
                                        rng):
        model = _model(vocabulary, ranker_config)
        document = make_document('empty', [])
        score = model.training_score(make_query([4]), document,
                                     self.train_config, rng, training=False)
        assert 0.0 < score.item() < 1.0

    @pytest.mark.parametrize('weighting', ['relaxed', 'softmax'])
    def test_selector_receives_gradient(self, vocabulary, ranker_config,
                                        weighting):
        model = _model(vocabulary, ranker_config)
        train_config = self.train_config.model_copy(
            update={'token_weighting': weighting})
        rng = np.random.default_rng(4)
        model.store.zero_grad()
        query = make_query([4, 5])
        loss = hinge_loss(
            model.training_score(query, DOCUMENTS[0], train_config, rng),
            model.training_score(query, DOCUMENTS[1], train_config, rng),
            train_config.margin)
        ad.backward(loss)
        gradient = model.store.get('selector.projection.weight').grad
        assert np.any(gradient != 0)

    @pytest.mark.parametrize('kind', ['linear', 'attentive'])
    def test_end_to_end_gradient_check(self, vocabulary, ranker_config,
                                       kind):
        model = _model(vocabulary, ranker_config, kind=kind)
        train_config = self.train_config.model_copy(
            update={'selector': kind})
        rng = np.random.default_rng(8)
        pairs = [
            (make_query([4, 5], 'q1'), DOCUMENTS[0], DOCUMENTS[1]),
            (make_query([10, 12], 'q2'), DOCUMENTS[2], DOCUMENTS[3]),
        ]
        uniforms = {document.doc_id: draw_uniforms(4, rng)
                    for document in DOCUMENTS}

        def score(query, document):
            return model.training_score(
                query, document, train_config, rng, training=False,
                surrogate=True, uniforms=uniforms[document.doc_id])

        def loss():
            return batch_loss(
                [(score(query, positive), score(query, negative))
                 for query, positive, negative in pairs],
                train_config.margin)

        error = gradient_check(loss, model.store, eps=1e-5,
                               coordinates_per_parameter=4)
        assert error < 1e-4

    def test_straight_through_forward_matches_identity(self, vocabulary,
                                                       ranker_config):
        model = _model(vocabulary, ranker_config)
        rng = np.random.default_rng(12)
        query = make_query([4, 5])
        for document in DOCUMENTS:
            uniforms = draw_uniforms(len(document.sentences), rng)
            first = model.training_score(query, document, self.train_config,
                                         rng, training=False,
                                         uniforms=uniforms)
            second = model.training_score(
                query, document,
                self.train_config.model_copy(
                    update={'token_weighting': 'softmax'}),
                rng, training=False, uniforms=uniforms)
            assert_array_equal(first.data, second.data)
