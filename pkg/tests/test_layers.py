import numpy as np
import pytest
from numpy.testing import assert_allclose

from domain import autodiff as ad
from domain.autodiff import gradient_check
from domain.exceptions import ShapeMismatchError
from domain.layers import (BidirectionalGRU, EncoderLayer,
                           GatedRecurrentUnit, Linear, LayerNorm,
                           MultiHeadSelfAttention)


def test_linear_parameter_names(store, rng):
    Linear(store, 'proj', 3, 2, rng)
    Linear(store, 'plain', 3, 2, rng, bias=False)
    assert list(store) == ['proj.weight', 'proj.bias', 'plain.weight']
    assert store.get('proj.weight').shape == (3, 2)


def test_shared_name_checks_shape(store, rng):
    Linear(store, 'proj', 3, 2, rng)
    with pytest.raises(ShapeMismatchError):
        Linear(store, 'proj', 4, 2, rng)


def test_layer_norm_output(store, rng):
    layer = LayerNorm(store, 'norm', 6, rng)
    out = layer(ad.as_tensor(rng.normal(loc=3.0, scale=5.0, size=(4, 6))))
    assert_allclose(out.data.mean(axis=-1), 0.0, atol=1e-12)
    assert_allclose(out.data.var(axis=-1), 1.0, atol=1e-9)


def test_gru_reverse_reads_sequence_backwards(store, rng):
    layer = GatedRecurrentUnit(store, 'gru', 3, 4, rng)
    x = rng.normal(size=(5, 3))
    backwards = layer(ad.as_tensor(x), reverse=True).data
    forwards = layer(ad.as_tensor(x[::-1])).data
    assert_allclose(backwards, forwards[::-1])


def test_bidirectional_width(store, rng):
    layer = BidirectionalGRU(store, 'bigru', 3, 4, rng)
    assert layer.output_dim == 8
    assert layer(ad.as_tensor(rng.normal(size=(5, 3)))).shape == (5, 8)


def test_attention_is_permutation_equivariant(store, rng):
    layer = MultiHeadSelfAttention(store, 'attention', 8, 2, rng)
    x = rng.normal(size=(6, 8))
    order = rng.permutation(6)
    assert_allclose(layer(ad.as_tensor(x[order])).data,
                    layer(ad.as_tensor(x)).data[order], atol=1e-12)


@pytest.mark.parametrize('build', [
    lambda store, rng: LayerNorm(store, 'layer', 4, rng),
    lambda store, rng: GatedRecurrentUnit(store, 'layer', 4, 3, rng),
    lambda store, rng: BidirectionalGRU(store, 'layer', 4, 2, rng),
    lambda store, rng: MultiHeadSelfAttention(store, 'layer', 4, 2, rng),
    lambda store, rng: EncoderLayer(store, 'layer', 4, 2, 6, rng),
])
def test_gradient_check(store, rng, build):
    layer = build(store, rng)
    x = ad.as_tensor(rng.normal(size=(3, 4)))
    weights = ad.as_tensor(rng.normal(size=layer(x).shape))

    def loss():
        return ad.reduce_sum(ad.tanh(layer(x)) * weights)

    assert gradient_check(loss, store, eps=1e-5,
                          coordinates_per_parameter=6) < 1e-4
