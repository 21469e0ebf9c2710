"""Ранкер: сборка входа [CLS] q [SEP] d̂ [SEP], компактный энкодер
трансформера и голова sigmoid(W * dropout(o) + b) над выходом [CLS]."""
import numpy as np

from domain import autodiff as ad
from domain.autodiff import ParameterStore, Tensor
from domain.exceptions import RankerError
from domain.layers import Embedding, EncoderLayer, LayerNorm, Linear
from domain.models import Query, RankerConfig, RankerInput, Summary, Vocabulary

EMBEDDING_NAME = 'embedding'


def assemble_input(query: Query, summary: Summary, max_len: int,
                   vocabulary: Vocabulary) -> RankerInput:
    """Токены сводки, не помещающиеся в max_len, отбрасываются с конца;
    для каждого токена сводки запоминается номер его предложения."""
    budget = max_len - 3 - len(query.token_ids)
    if budget < 0:
        raise RankerError(
            f'Запрос {query.query_id}: {len(query.token_ids)} токенов не '
            f'помещаются в max_len={max_len}')
    tokens = summary.token_ids[:budget]
    origins = summary.token_origins[:budget]
    prefix = len(query.token_ids) + 2
    token_ids = ((vocabulary.cls_id,) + query.token_ids
                 + (vocabulary.sep_id,) + tokens + (vocabulary.sep_id,))
    return RankerInput(
        token_ids=token_ids,
        sentence_origins=(None,) * prefix + origins + (None,),
        length=len(token_ids),
    )


def summary_token_weights(ranker_input: RankerInput,
                          sentence_weights: Tensor) -> Tensor:
    """Вес каждого токена входа: вес его предложения для токенов
    сводки, единица для запроса и служебных токенов."""
    origins = ranker_input.sentence_origins
    positions = [index for index, origin in enumerate(origins)
                 if origin is not None]
    if not positions:
        return ad.as_tensor(np.ones(len(origins)))
    start, end = positions[0], positions[-1] + 1
    return ad.concat([
        ad.as_tensor(np.ones(start)),
        ad.gather(sentence_weights, origins[start:end]),
        ad.as_tensor(np.ones(len(origins) - end)),
    ])


class TransformerRanker:
    """Энкодер с обучаемыми позициями и нормализацией после сложения.
    Все параметры, кроме общего эмбеддинга, живут под префиксом ranker."""

    def __init__(self, store: ParameterStore, ranker_config: RankerConfig,
                 rng: np.random.Generator) -> None:
        self.config = ranker_config
        self._store = store
        dim = ranker_config.model_dim
        self._embedding = Embedding(store, EMBEDDING_NAME,
                                    ranker_config.vocab_size, dim, rng)
        self._position_name = 'ranker.position'
        store.get_or_create(self._position_name,
                            (ranker_config.max_len, dim), rng, init='normal')
        self._embedding_norm = LayerNorm(store, 'ranker.embedding_norm',
                                         dim, rng)
        self._layers = [
            EncoderLayer(store, f'ranker.layer{index}', dim,
                         ranker_config.num_heads, ranker_config.ff_dim, rng)
            for index in range(ranker_config.num_layers)
        ]
        self._head = Linear(store, 'ranker.head', dim, 1, rng)

    def score_graph(
        self,
        ranker_input: RankerInput,
        weights: Tensor | None = None,
        training: bool = False,
        rng: np.random.Generator | None = None,
        surrogate: bool = False,
    ) -> Tensor:
        """Оценка y в (0, 1) как скалярный узел графа.

        weights - веса токенов для straight-through масштабирования
        эмбеддингов; None означает тождественный режим."""
        token_ids = np.asarray(ranker_input.token_ids, dtype=np.int64)
        if ranker_input.length > self.config.max_len:
            raise RankerError(f'Длина входа {ranker_input.length} больше '
                              f'max_len={self.config.max_len}')
        if token_ids.min() < 0 or token_ids.max() >= self.config.vocab_size:
            raise RankerError('Вход ранкера содержит неизвестные токены')
        if training and self.config.dropout > 0 and rng is None:
            raise RankerError('Для dropout при обучении нужен генератор')

        x = self._embedding(token_ids)
        if weights is not None:
            x = ad.straight_through_scale(x, weights, surrogate)
        positions = ad.gather(self._store.get(self._position_name),
                              range(ranker_input.length))
        x = self._embedding_norm(x + positions)
        for layer in self._layers:
            x = layer(x)
        output = ad.dropout(ad.gather(x, [0]), 1.0 - self.config.dropout,
                            rng, training)
        return ad.reshape(ad.sigmoid(self._head(output)), ())

    def score(self, ranker_input: RankerInput) -> float:
        return self.score_graph(ranker_input).item()
