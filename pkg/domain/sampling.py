"""Возмущение Гумбеля, ослабленный top-k и жесткая выборка подмножества.

Логиты селектора используются как логарифмы весов: ключ r_i = w_i + g_i.
Top-k ключей дает выборку без возвращения с вероятностями softmax(w),
ослабленный top-k дает дифференцируемый k-hot вектор v по тем же ключам.
"""
from dataclasses import dataclass

import numpy as np

import config
from domain import autodiff as ad
from domain.autodiff import Tensor
from domain.exceptions import SamplingError


@dataclass(frozen=True)
class GumbelKeys:
    """Ключи r = logits + g вместе с шумом и исходными равномерными
    величинами (для воспроизведения выборки в тестах)."""
    keys: Tensor
    noise: np.ndarray
    uniforms: np.ndarray


@dataclass(frozen=True)
class RelaxedSubset:
    """v_i = сумма вероятностей включения по k шагам; indices - жесткий
    top-k тех же ключей по возрастанию. v_i может превышать 1."""
    v: Tensor
    step_probabilities: tuple[np.ndarray, ...]
    indices: tuple[int, ...]
    temperature: float
    k: int


def draw_uniforms(shape, rng: np.random.Generator) -> np.ndarray:
    # Нижняя граница исключает 0, верхняя не достигается.
    return rng.uniform(np.finfo(np.float64).tiny, 1.0, size=shape)


def gumbel_noise(u) -> np.ndarray:
    """g = -log(-log u) для u из (0, 1)."""
    u = np.asarray(u, dtype=np.float64)
    if np.any((u <= 0.0) | (u >= 1.0)) or np.any(np.isnan(u)):
        raise SamplingError('Равномерные величины должны лежать в (0, 1)')
    return -np.log(-np.log(u))


def gumbel_keys(logits: Tensor, rng: np.random.Generator | None = None,
                uniforms=None) -> GumbelKeys:
    """Ключи Гумбеля. При заданных uniforms шум замораживается."""
    logits = ad.as_tensor(logits)
    if uniforms is None:
        if rng is None:
            raise SamplingError('Нужен генератор или готовые uniforms')
        uniforms = draw_uniforms(logits.shape, rng)
    uniforms = np.asarray(uniforms, dtype=np.float64)
    if uniforms.shape != logits.shape:
        raise SamplingError(f'Форма uniforms {uniforms.shape} не совпадает '
                            f'с логитами {logits.shape}')
    noise = gumbel_noise(uniforms)
    return GumbelKeys(keys=logits + noise, noise=noise, uniforms=uniforms)


def gumbel_argmax_sample(logits, rng: np.random.Generator) -> int:
    """Один индекс с вероятностями softmax(logits)."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1 or not logits.size:
        raise SamplingError(f'Ожидался непустой вектор, форма {logits.shape}')
    noise = gumbel_noise(draw_uniforms(logits.shape, rng))
    return int(np.argmax(logits + noise))


def _check_k(k: int, n: int) -> None:
    if k < 1:
        raise SamplingError(f'k должно быть >= 1: {k}')
    if k > n:
        raise SamplingError(f'k={k} больше числа элементов {n}')


def hard_topk(keys, k: int):
    """Индексы k наибольших ключей по последней оси, по возрастанию.
    При равенстве выигрывает меньший индекс. Для вектора возвращает
    кортеж, для матрицы - массив (строки независимы)."""
    if isinstance(keys, GumbelKeys):
        keys = keys.keys
    if isinstance(keys, Tensor):
        keys = keys.data
    keys = np.asarray(keys, dtype=np.float64)
    _check_k(k, keys.shape[-1])
    order = np.sort(np.argsort(-keys, axis=-1, kind='stable')[..., :k],
                    axis=-1)
    if keys.ndim == 1:
        return tuple(int(index) for index in order)
    return order


def relaxed_topk(keys, k: int, temperature: float) -> RelaxedSubset:
    """Ослабленный top-k: на каждом из k шагов softmax(alpha / t),
    затем alpha += log(1 - p). Дифференцируем по ключам."""
    key_tensor = keys.keys if isinstance(keys, GumbelKeys) else \
        ad.as_tensor(keys)
    if key_tensor.data.ndim != 1:
        raise SamplingError(
            f'Ожидался вектор ключей, форма {key_tensor.shape}')
    _check_k(k, key_tensor.shape[0])
    if temperature <= 0:
        raise SamplingError(f'Температура должна быть > 0: {temperature}')

    alpha = key_tensor
    relaxed = None
    steps = []
    for _ in range(k):
        probabilities = ad.softmax(ad.scale(alpha, 1.0 / temperature))
        steps.append(probabilities.data.copy())
        relaxed = probabilities if relaxed is None else \
            relaxed + probabilities
        clamped = ad.clip(probabilities, 0.0, config.PROBABILITY_CLAMP)
        alpha = alpha + ad.log1p(ad.scale(clamped, -1.0))
    return RelaxedSubset(
        v=relaxed,
        step_probabilities=tuple(steps),
        indices=hard_topk(key_tensor.data, k),
        temperature=temperature,
        k=k,
    )


def subset_sample(logits: Tensor, k: int, temperature: float,
                  rng: np.random.Generator | None = None,
                  uniforms=None) -> RelaxedSubset:
    """Ключи Гумбеля, затем ослабленный и жесткий top-k по одним и тем
    же ключам."""
    return relaxed_topk(gumbel_keys(logits, rng, uniforms), k, temperature)
