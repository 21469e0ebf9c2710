"""Обратное автоматическое дифференцирование над плотными массивами.

Граф строится заново на каждом шаге (define-by-run): каждая операция
возвращает новый Tensor, который помнит своих родителей и функцию,
переводящую градиент выхода в градиенты входов. Все вычисления
ведутся в двойной точности.
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np

from domain.exceptions import (AutodiffError, IndexOutOfRangeError,
                               NonScalarBackwardError, ShapeMismatchError)

DTYPE = np.float64

BackwardFn = Callable[[np.ndarray], tuple]


class Tensor:
    """Плотный массив, участвующий в графе дифференцирования.

    Буфер градиента есть только у листьев с requires_grad=True
    (параметров). Промежуточные узлы хранят ссылки на родителей,
    константы не хранят ничего."""

    __slots__ = ('data', 'grad', 'requires_grad', '_parents',
                 '_backward', '_op')

    def __init__(self, data, requires_grad: bool = False) -> None:
        self.data = np.array(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._parents: tuple['Tensor', ...] = ()
        self._backward: BackwardFn | None = None
        self._op = ''

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    @property
    def T(self) -> 'Tensor':
        return transpose(self)

    def item(self) -> float:
        return float(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        op = f', op={self._op}' if self._op else ''
        return f'Tensor(shape={self.shape}{op})'

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / other)
        return mul(self, power(other, -1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent: float):
        return power(self, exponent)


def as_tensor(value) -> Tensor:
    """Оборачивает число или массив в константу графа."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _make(data: np.ndarray, parents: tuple[Tensor, ...],
          backward_fn: BackwardFn, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(data, dtype=DTYPE)
    out.grad = None
    out.requires_grad = any(parent.requires_grad for parent in parents)
    out._parents = parents if out.requires_grad else ()
    out._backward = backward_fn if out.requires_grad else None
    out._op = op
    return out


def _broadcast_shape(op: str, left: np.ndarray, right: np.ndarray):
    try:
        return np.broadcast_shapes(left.shape, right.shape)
    except ValueError:
        raise ShapeMismatchError(
            f'{op}: формы {left.shape} и {right.shape} несовместимы'
        ) from None


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _normalize_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise ShapeMismatchError(f'Ось {axis} вне диапазона для ndim={ndim}')
    return axis % ndim


# Поэлементные операции.

def add(left, right) -> Tensor:
    left, right = as_tensor(left), as_tensor(right)
    _broadcast_shape('add', left.data, right.data)

    def _backward(grad):
        return (_unbroadcast(grad, left.shape),
                _unbroadcast(grad, right.shape))

    return _make(left.data + right.data, (left, right), _backward, 'add')


def sub(left, right) -> Tensor:
    left, right = as_tensor(left), as_tensor(right)
    _broadcast_shape('sub', left.data, right.data)

    def _backward(grad):
        return (_unbroadcast(grad, left.shape),
                _unbroadcast(-grad, right.shape))

    return _make(left.data - right.data, (left, right), _backward, 'sub')


def mul(left, right) -> Tensor:
    left, right = as_tensor(left), as_tensor(right)
    _broadcast_shape('mul', left.data, right.data)

    def _backward(grad):
        return (_unbroadcast(grad * right.data, left.shape),
                _unbroadcast(grad * left.data, right.shape))

    return _make(left.data * right.data, (left, right), _backward, 'mul')


def scale(tensor: Tensor, factor: float) -> Tensor:
    tensor = as_tensor(tensor)
    factor = float(factor)
    return _make(tensor.data * factor, (tensor,),
                 lambda grad: (grad * factor,), 'scale')


def exp(tensor: Tensor) -> Tensor:
    out_data = np.exp(tensor.data)
    return _make(out_data, (tensor,),
                 lambda grad: (grad * out_data,), 'exp')


def log(tensor: Tensor) -> Tensor:
    return _make(np.log(tensor.data), (tensor,),
                 lambda grad: (grad / tensor.data,), 'log')


def log1p(tensor: Tensor) -> Tensor:
    return _make(np.log1p(tensor.data), (tensor,),
                 lambda grad: (grad / (1.0 + tensor.data),), 'log1p')


def tanh(tensor: Tensor) -> Tensor:
    out_data = np.tanh(tensor.data)
    return _make(out_data, (tensor,),
                 lambda grad: (grad * (1.0 - out_data ** 2),), 'tanh')


def sigmoid(tensor: Tensor) -> Tensor:
    # Запись через tanh не переполняется при больших |x|.
    out_data = 0.5 * (1.0 + np.tanh(0.5 * tensor.data))
    return _make(out_data, (tensor,),
                 lambda grad: (grad * out_data * (1.0 - out_data),),
                 'sigmoid')


def relu(tensor: Tensor) -> Tensor:
    mask = tensor.data > 0
    return _make(np.where(mask, tensor.data, 0.0), (tensor,),
                 lambda grad: (grad * mask,), 'relu')


def power(tensor: Tensor, exponent: float) -> Tensor:
    tensor = as_tensor(tensor)
    exponent = float(exponent)

    def _backward(grad):
        return (grad * exponent * tensor.data ** (exponent - 1.0),)

    return _make(tensor.data ** exponent, (tensor,), _backward, 'pow')


def clip(tensor: Tensor, low: float, high: float) -> Tensor:
    """Ограничение значений; вне [low, high] градиент нулевой."""
    inside = (tensor.data >= low) & (tensor.data <= high)
    return _make(np.clip(tensor.data, low, high), (tensor,),
                 lambda grad: (grad * inside,), 'clip')


def masked_fill(tensor: Tensor, mask, value: float) -> Tensor:
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), tensor.shape)
    return _make(np.where(mask, value, tensor.data), (tensor,),
                 lambda grad: (np.where(mask, 0.0, grad),), 'masked_fill')


# Линейная алгебра и работа с формой.

def matmul(left: Tensor, right: Tensor) -> Tensor:
    left, right = as_tensor(left), as_tensor(right)
    if left.data.ndim != 2 or right.data.ndim != 2:
        raise ShapeMismatchError(
            f'matmul ожидает матрицы, получены {left.shape} и {right.shape}')
    if left.shape[1] != right.shape[0]:
        raise ShapeMismatchError(
            f'matmul: формы {left.shape} и {right.shape} несовместимы')

    def _backward(grad):
        return grad @ right.data.T, left.data.T @ grad

    return _make(left.data @ right.data, (left, right), _backward, 'matmul')


def dot(left: Tensor, right: Tensor) -> Tensor:
    left, right = as_tensor(left), as_tensor(right)
    if left.data.ndim != 1 or left.shape != right.shape:
        raise ShapeMismatchError(
            f'dot ожидает векторы одной длины: {left.shape}, {right.shape}')

    def _backward(grad):
        return grad * right.data, grad * left.data

    return _make(np.dot(left.data, right.data), (left, right),
                 _backward, 'dot')


def transpose(tensor: Tensor) -> Tensor:
    if tensor.data.ndim != 2:
        raise ShapeMismatchError(
            f'transpose ожидает матрицу, получено {tensor.shape}')
    return _make(tensor.data.T, (tensor,),
                 lambda grad: (grad.T,), 'transpose')


def reshape(tensor: Tensor, shape: Sequence[int]) -> Tensor:
    original = tensor.shape
    try:
        out_data = tensor.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeMismatchError(
            f'reshape: нельзя привести {original} к {tuple(shape)}'
        ) from None
    return _make(out_data, (tensor,),
                 lambda grad: (grad.reshape(original),), 'reshape')


def gather(tensor: Tensor, indices, axis: int = 0) -> Tensor:
    """Выборка срезов по индексам вдоль оси (по умолчанию строк)."""
    tensor = as_tensor(tensor)
    indices = np.asarray(indices, dtype=np.int64).reshape(-1)
    axis = _normalize_axis(axis, tensor.data.ndim)
    size = tensor.shape[axis]
    if indices.size and (indices.min() < 0 or indices.max() >= size):
        raise IndexOutOfRangeError(
            f'gather: индексы [{indices.min()}, {indices.max()}] '
            f'вне диапазона [0, {size}) по оси {axis}')

    def _backward(grad):
        full = np.zeros_like(tensor.data)
        np.add.at(np.moveaxis(full, axis, 0), indices,
                  np.moveaxis(grad, axis, 0))
        return (full,)

    return _make(np.take(tensor.data, indices, axis=axis), (tensor,),
                 _backward, 'gather')


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(item) for item in tensors)
    if not tensors:
        raise ShapeMismatchError('concat: пустой список тензоров')
    axis = _normalize_axis(axis, tensors[0].data.ndim)
    try:
        out_data = np.concatenate([item.data for item in tensors], axis=axis)
    except ValueError:
        shapes = [item.shape for item in tensors]
        raise ShapeMismatchError(
            f'concat по оси {axis}: несовместимые формы {shapes}') from None
    split_points = np.cumsum([item.shape[axis] for item in tensors])[:-1]

    def _backward(grad):
        return tuple(np.split(grad, split_points, axis=axis))

    return _make(out_data, tensors, _backward, 'concat')


def stack(tensors: Sequence[Tensor]) -> Tensor:
    return concat([reshape(item, (1,) + item.shape) for item in tensors])


# Редукции.

def _expand_reduced(grad, shape, axis, keepdims):
    if axis is not None and not keepdims:
        grad = np.expand_dims(grad, axis)
    return np.broadcast_to(grad, shape)


def reduce_sum(tensor: Tensor, axis: int | None = None,
               keepdims: bool = False) -> Tensor:
    if axis is not None:
        axis = _normalize_axis(axis, tensor.data.ndim)
    return _make(
        tensor.data.sum(axis=axis, keepdims=keepdims), (tensor,),
        lambda grad: (_expand_reduced(grad, tensor.shape, axis, keepdims),),
        'sum')


def mean(tensor: Tensor, axis: int | None = None,
         keepdims: bool = False) -> Tensor:
    count = tensor.data.size if axis is None else tensor.shape[axis]
    if count == 0:
        raise ShapeMismatchError(f'mean по пустой оси: {tensor.shape}')
    return scale(reduce_sum(tensor, axis, keepdims), 1.0 / count)


def reduce_max(tensor: Tensor, axis: int | None = None,
               keepdims: bool = False) -> Tensor:
    """Максимум; градиент уходит в первый максимальный элемент."""
    if tensor.data.size == 0:
        raise ShapeMismatchError(f'max по пустому тензору: {tensor.shape}')
    if axis is None:
        flat_index = int(np.argmax(tensor.data))
        out_data = tensor.data.reshape(-1)[flat_index]
        if keepdims:
            out_data = out_data.reshape((1,) * tensor.data.ndim)

        def _backward(grad):
            full = np.zeros_like(tensor.data)
            full.reshape(-1)[flat_index] = np.asarray(grad).reshape(())
            return (full,)

        return _make(out_data, (tensor,), _backward, 'max')

    axis = _normalize_axis(axis, tensor.data.ndim)
    index = np.expand_dims(np.argmax(tensor.data, axis=axis), axis)
    out_data = np.take_along_axis(tensor.data, index, axis)
    if not keepdims:
        out_data = np.squeeze(out_data, axis)

    def _backward(grad):
        if not keepdims:
            grad = np.expand_dims(grad, axis)
        full = np.zeros_like(tensor.data)
        np.put_along_axis(full, index, grad, axis)
        return (full,)

    return _make(out_data, (tensor,), _backward, 'max')


def softmax(tensor: Tensor) -> Tensor:
    """Softmax по последней оси со сдвигом на максимум. Элементы -inf
    получают нулевую вероятность."""
    shifted = tensor.data - tensor.data.max(axis=-1, keepdims=True)
    exps = np.exp(shifted)
    out_data = exps / exps.sum(axis=-1, keepdims=True)

    def _backward(grad):
        inner = (grad * out_data).sum(axis=-1, keepdims=True)
        return (out_data * (grad - inner),)

    return _make(out_data, (tensor,), _backward, 'softmax')


def dropout(tensor: Tensor, keep_prob: float, rng: np.random.Generator,
            training: bool) -> Tensor:
    if not 0.0 < keep_prob <= 1.0:
        raise AutodiffError(f'keep_prob вне (0, 1]: {keep_prob}')
    if not training or keep_prob == 1.0:
        return tensor
    mask = (rng.random(tensor.shape) < keep_prob) / keep_prob
    return _make(tensor.data * mask, (tensor,),
                 lambda grad: (grad * mask,), 'dropout')


def straight_through_scale(tokens: Tensor, weights: Tensor,
                           surrogate: bool = False) -> Tensor:
    """Прямой проход возвращает tokens без изменений, обратный ведет
    себя как у tokens ⊙ weights (по одному весу на строку).

    При surrogate=True прямой проход тоже умножает на веса; так
    получается гладкий суррогат для проверки конечными разностями."""
    tokens, weights = as_tensor(tokens), as_tensor(weights)
    if weights.shape != tokens.shape[:-1]:
        raise ShapeMismatchError(
            f'straight_through_scale: веса {weights.shape} не '
            f'соответствуют строкам {tokens.shape}')
    expanded = weights.data[..., None]
    out_data = tokens.data * expanded if surrogate else tokens.data.copy()

    def _backward(grad):
        return grad * expanded, (tokens.data * grad).sum(axis=-1)

    return _make(out_data, (tokens, weights), _backward, 'straight_through')


# Обратный проход.

def _topological_order(root: Tensor) -> list[Tensor]:
    order = []
    visited = set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack_.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack_.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Накапливает d(loss)/d(параметр) в буферах grad листьев."""
    if loss.data.ndim != 0:
        raise NonScalarBackwardError(
            f'backward ожидает скаляр, получено {loss.shape}')
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones((), dtype=DTYPE)}
    for node in reversed(_topological_order(loss)):
        grad = grads.pop(id(node), None)
        if grad is None:
            continue
        if node.is_leaf:
            node.grad += grad
            continue
        for parent, parent_grad in zip(node._parents, node._backward(grad)):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + parent_grad
            else:
                grads[key] = parent_grad


# Параметры.

@dataclass
class OptimizerState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step: int = 0


class ParameterStore:
    """Именованное хранилище обучаемых параметров вместе с состоянием
    оптимизатора для каждого из них."""

    def __init__(self) -> None:
        self._parameters: dict[str, Tensor] = {}
        self._states: dict[str, OptimizerState] = {}

    def __contains__(self, name: str) -> bool:
        return name in self._parameters

    def __len__(self) -> int:
        return len(self._parameters)

    def __iter__(self) -> Iterator[str]:
        return iter(self._parameters)

    def items(self) -> list[tuple[str, Tensor]]:
        return list(self._parameters.items())

    def add(self, name: str, data) -> Tensor:
        if name in self._parameters:
            raise AutodiffError(f'Параметр {name} уже зарегистрирован')
        tensor = Tensor(data, requires_grad=True)
        self._parameters[name] = tensor
        return tensor

    def get(self, name: str) -> Tensor:
        try:
            return self._parameters[name]
        except KeyError:
            raise AutodiffError(f'Параметр {name} не найден') from None

    def get_or_create(self, name: str, shape: tuple[int, ...],
                      rng: np.random.Generator,
                      init: str = 'xavier') -> Tensor:
        """Возвращает параметр, при отсутствии создает его с заданной
        инициализацией. Форма существующего параметра проверяется."""
        if name in self._parameters:
            tensor = self._parameters[name]
            if tensor.shape != tuple(shape):
                raise ShapeMismatchError(
                    f'Параметр {name}: ожидалась форма {tuple(shape)}, '
                    f'в хранилище {tensor.shape}')
            return tensor
        return self.add(name, _initialize(shape, rng, init))

    def zero_grad(self) -> None:
        for tensor in self._parameters.values():
            tensor.grad = np.zeros_like(tensor.data)

    def state(self, name: str) -> OptimizerState:
        if name not in self._states:
            data = self.get(name).data
            self._states[name] = OptimizerState(
                first_moment=np.zeros_like(data),
                second_moment=np.zeros_like(data))
        return self._states[name]

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: tensor.data.copy()
                for name, tensor in self._parameters.items()}

    def load(self, arrays: dict[str, np.ndarray]) -> None:
        """Заменяет значения параметров; новые имена добавляются."""
        for name, array in arrays.items():
            if name not in self._parameters:
                self.add(name, array)
                continue
            tensor = self._parameters[name]
            if tensor.shape != np.shape(array):
                raise ShapeMismatchError(
                    f'Параметр {name}: форма {np.shape(array)} вместо '
                    f'{tensor.shape}')
            tensor.data[...] = array


def _initialize(shape, rng: np.random.Generator, init: str) -> np.ndarray:
    shape = tuple(shape)
    if init == 'zeros':
        return np.zeros(shape, dtype=DTYPE)
    if init == 'ones':
        return np.ones(shape, dtype=DTYPE)
    if init == 'normal':
        return rng.normal(0.0, 0.02, size=shape)
    if init == 'xavier':
        fan_in = shape[0]
        fan_out = shape[-1] if len(shape) > 1 else shape[0]
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=shape)
    raise AutodiffError(f'Неизвестная инициализация: {init}')


def gradient_check(f: Callable[[], Tensor], params: ParameterStore,
                   eps: float = 1e-5,
                   coordinates_per_parameter: int | None = None,
                   rng: np.random.Generator | None = None) -> float:
    """Сравнивает аналитические градиенты с центральными разностями.

    f должна строить скалярный граф детерминированно. Возвращает
    максимум |analytic - numeric| / max(1, |analytic|) по проверенным
    координатам; при нечисловых значениях возвращает inf."""
    if not 0.0 < eps <= 1e-3:
        raise AutodiffError(f'eps должен лежать в (0, 1e-3]: {eps}')
    rng = rng or np.random.default_rng(0)
    params.zero_grad()
    backward(f())
    analytic = {name: tensor.grad.copy() for name, tensor in params.items()}
    params.zero_grad()

    worst = 0.0
    for name, tensor in params.items():
        size = tensor.data.size
        if coordinates_per_parameter is None or size <= \
                coordinates_per_parameter:
            coordinates = range(size)
        else:
            coordinates = rng.choice(size, coordinates_per_parameter,
                                     replace=False)
        for flat in coordinates:
            index = np.unravel_index(int(flat), tensor.shape)
            original = tensor.data[index]
            tensor.data[index] = original + eps
            plus = float(f().data)
            tensor.data[index] = original - eps
            minus = float(f().data)
            tensor.data[index] = original
            numeric = (plus - minus) / (2.0 * eps)
            value = float(analytic[name][index])
            if not (math.isfinite(numeric) and math.isfinite(value)):
                logging.error(f'Нечисловой градиент: {name}{index}')
                return math.inf
            worst = max(worst, abs(value - numeric) / max(1.0, abs(value)))
    return worst
