"""Слои нейросетей поверх autodiff. Параметры живут в ParameterStore
под иерархическими именами, слой хранит только имена, поэтому после
загрузки контрольной точки слои сразу видят новые значения."""
import math

import numpy as np

from domain import autodiff as ad
from domain.autodiff import ParameterStore, Tensor


class Embedding:

    def __init__(self, store: ParameterStore, name: str, vocab_size: int,
                 dim: int, rng: np.random.Generator) -> None:
        self._store = store
        self.name = name
        store.get_or_create(name, (vocab_size, dim), rng, init='normal')

    def __call__(self, token_ids) -> Tensor:
        return ad.gather(self._store.get(self.name), token_ids)


class Linear:
    """Аффинный слой x @ W + b."""

    def __init__(self, store: ParameterStore, name: str, in_dim: int,
                 out_dim: int, rng: np.random.Generator,
                 bias: bool = True) -> None:
        self._store = store
        self.weight_name = f'{name}.weight'
        self.bias_name = f'{name}.bias' if bias else None
        store.get_or_create(self.weight_name, (in_dim, out_dim), rng)
        if bias:
            store.get_or_create(self.bias_name, (out_dim,), rng, init='zeros')

    def __call__(self, x: Tensor) -> Tensor:
        out = ad.matmul(x, self._store.get(self.weight_name))
        if self.bias_name:
            out = out + self._store.get(self.bias_name)
        return out


class LayerNorm:

    def __init__(self, store: ParameterStore, name: str, dim: int,
                 rng: np.random.Generator, eps: float = 1e-12) -> None:
        self._store = store
        self._eps = eps
        self.gain_name = f'{name}.gain'
        self.shift_name = f'{name}.shift'
        store.get_or_create(self.gain_name, (dim,), rng, init='ones')
        store.get_or_create(self.shift_name, (dim,), rng, init='zeros')

    def __call__(self, x: Tensor) -> Tensor:
        centered = x - ad.mean(x, axis=-1, keepdims=True)
        variance = ad.mean(centered * centered, axis=-1, keepdims=True)
        normalized = centered * ad.power(variance + self._eps, -0.5)
        return (normalized * self._store.get(self.gain_name)
                + self._store.get(self.shift_name))


class GatedRecurrentUnit:
    """Однонаправленный GRU. Входные проекции считаются одним
    умножением на всю последовательность, по шагам идет только
    рекуррентная часть."""

    def __init__(self, store: ParameterStore, name: str, in_dim: int,
                 hidden: int, rng: np.random.Generator) -> None:
        self.hidden = hidden
        self._input = {gate: Linear(store, f'{name}.input_{gate}', in_dim,
                                    hidden, rng)
                       for gate in ('update', 'reset', 'candidate')}
        self._recurrent = {gate: Linear(store, f'{name}.recurrent_{gate}',
                                        hidden, hidden, rng, bias=False)
                           for gate in ('update', 'reset', 'candidate')}

    def __call__(self, x: Tensor, reverse: bool = False) -> Tensor:
        steps = x.shape[0]
        projected = {gate: layer(x) for gate, layer in self._input.items()}
        state = ad.as_tensor(np.zeros((1, self.hidden)))
        outputs: list[Tensor | None] = [None] * steps
        order = range(steps - 1, -1, -1) if reverse else range(steps)
        for step in order:
            update = ad.sigmoid(ad.gather(projected['update'], [step])
                                + self._recurrent['update'](state))
            reset = ad.sigmoid(ad.gather(projected['reset'], [step])
                               + self._recurrent['reset'](state))
            candidate = ad.tanh(
                ad.gather(projected['candidate'], [step])
                + reset * self._recurrent['candidate'](state))
            state = (1.0 - update) * candidate + update * state
            outputs[step] = state
        return ad.concat(outputs, axis=0)


class BidirectionalGRU:
    """Выходы прямого и обратного проходов, склеенные по признакам."""

    def __init__(self, store: ParameterStore, name: str, in_dim: int,
                 hidden: int, rng: np.random.Generator) -> None:
        self.output_dim = 2 * hidden
        self._forward = GatedRecurrentUnit(store, f'{name}.forward', in_dim,
                                           hidden, rng)
        self._backward = GatedRecurrentUnit(store, f'{name}.backward',
                                            in_dim, hidden, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.concat([self._forward(x), self._backward(x, reverse=True)],
                         axis=1)


class MultiHeadSelfAttention:

    def __init__(self, store: ParameterStore, name: str, dim: int,
                 num_heads: int, rng: np.random.Generator) -> None:
        self._heads = num_heads
        self._head_dim = dim // num_heads
        self._query = Linear(store, f'{name}.query', dim, dim, rng)
        self._key = Linear(store, f'{name}.key', dim, dim, rng)
        self._value = Linear(store, f'{name}.value', dim, dim, rng)
        self._output = Linear(store, f'{name}.output', dim, dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        queries, keys, values = self._query(x), self._key(x), self._value(x)
        factor = 1.0 / math.sqrt(self._head_dim)
        heads = []
        for head in range(self._heads):
            columns = range(head * self._head_dim,
                            (head + 1) * self._head_dim)
            q = ad.gather(queries, columns, axis=1)
            k = ad.gather(keys, columns, axis=1)
            v = ad.gather(values, columns, axis=1)
            weights = ad.softmax(ad.scale(q @ k.T, factor))
            heads.append(weights @ v)
        return self._output(ad.concat(heads, axis=1))


class EncoderLayer:
    """Слой трансформера: самовнимание и feed-forward, каждый с
    остаточной связью и нормализацией после сложения."""

    def __init__(self, store: ParameterStore, name: str, dim: int,
                 num_heads: int, ff_dim: int,
                 rng: np.random.Generator) -> None:
        self._attention = MultiHeadSelfAttention(
            store, f'{name}.attention', dim, num_heads, rng)
        self._attention_norm = LayerNorm(store, f'{name}.attention_norm',
                                         dim, rng)
        self._hidden = Linear(store, f'{name}.ff_hidden', dim, ff_dim, rng)
        self._out = Linear(store, f'{name}.ff_output', ff_dim, dim, rng)
        self._ff_norm = LayerNorm(store, f'{name}.ff_norm', dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        x = self._attention_norm(x + self._attention(x))
        return self._ff_norm(x + self._out(ad.relu(self._hidden(x))))
