import math
from pathlib import Path
from typing import Literal

from pydantic import (BaseModel, ConfigDict, Field, PrivateAttr,
                      field_validator, model_validator)

import config
from domain.exceptions import ConfigError, CorpusError

SPECIAL_TOKENS = ('[PAD]', '[UNK]', '[CLS]', '[SEP]')

SelectorKind = Literal['tfidf', 'bm25', 'semantic', 'linear', 'attentive',
                       'random', 'none']
TrainingMode = Literal['truncate', 'pipeline', 'e2e']
TRAINABLE_SELECTORS = ('linear', 'attentive')


class Sentence(BaseModel):
    """Модель предложения: исходный текст и идентификаторы токенов."""
    model_config = ConfigDict(frozen=True)

    text: str
    token_ids: tuple[int, ...]


class Document(BaseModel):
    """Модель документа - упорядоченной последовательности предложений
    (уже усеченной по ограничениям длины)."""
    model_config = ConfigDict(frozen=True)

    doc_id: str
    sentences: tuple[Sentence, ...]
    total_tokens: int

    @model_validator(mode='after')
    def check_lengths(self) -> 'Document':
        if len(self.sentences) > config.MAX_SENTENCES:
            raise ValueError(
                f'{self.doc_id}: больше {config.MAX_SENTENCES} предложений')
        counted = sum(len(item.token_ids) for item in self.sentences)
        if counted != self.total_tokens:
            raise ValueError(
                f'{self.doc_id}: total_tokens={self.total_tokens}, '
                f'в предложениях {counted}')
        if counted > config.MAX_DOCUMENT_TOKENS:
            raise ValueError(
                f'{self.doc_id}: больше {config.MAX_DOCUMENT_TOKENS} токенов')
        return self

    @classmethod
    def from_sentences(cls, doc_id: str,
                       sentences: list[Sentence]) -> 'Document':
        return cls(
            doc_id=doc_id,
            sentences=tuple(sentences),
            total_tokens=sum(len(item.token_ids) for item in sentences),
        )

    def sentence_offsets(self) -> list[int]:
        """Позиция первого токена каждого предложения в потоке токенов."""
        offsets = []
        position = 0
        for sentence in self.sentences:
            offsets.append(position)
            position += len(sentence.token_ids)
        return offsets

    def token_stream(self) -> list[int]:
        return [token for sentence in self.sentences
                for token in sentence.token_ids]


class Query(BaseModel):
    model_config = ConfigDict(frozen=True)

    query_id: str
    text: str
    token_ids: tuple[int, ...] = Field(max_length=config.MAX_QUERY_TOKENS)


class Vocabulary(BaseModel):
    """Словарь корпуса вместе со статистиками коллекции."""
    model_config = ConfigDict(frozen=True)

    id_to_token: tuple[str, ...]
    token_to_id: dict[str, int]
    document_frequency: tuple[int, ...]
    document_count: int
    average_document_length: float

    @model_validator(mode='after')
    def check_consistency(self) -> 'Vocabulary':
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError('Словарь содержит повторяющиеся токены')
        for index, token in enumerate(self.id_to_token):
            if self.token_to_id.get(token) != index:
                raise ValueError(f'Идентификатор токена {token} не плотный')
        for token in SPECIAL_TOKENS:
            if token not in self.token_to_id:
                raise ValueError(f'В словаре нет служебного токена {token}')
        if len(self.document_frequency) != len(self.id_to_token):
            raise ValueError('Длина document_frequency не совпадает')
        if any(df > self.document_count for df in self.document_frequency):
            raise ValueError('df токена больше числа документов')
        return self

    def __len__(self) -> int:
        return len(self.id_to_token)

    @property
    def pad_id(self) -> int:
        return self.token_to_id['[PAD]']

    @property
    def unk_id(self) -> int:
        return self.token_to_id['[UNK]']

    @property
    def cls_id(self) -> int:
        return self.token_to_id['[CLS]']

    @property
    def sep_id(self) -> int:
        return self.token_to_id['[SEP]']

    def is_special(self, token_id: int) -> bool:
        return token_id < len(SPECIAL_TOKENS)

    def encode(self, tokens: list[str]) -> list[int]:
        unk = self.unk_id
        return [self.token_to_id.get(token, unk) for token in tokens]


class Corpus(BaseModel):
    """Модель корпуса: документы в порядке загрузки и словарь."""
    model_config = ConfigDict(frozen=True)

    documents: tuple[Document, ...]
    vocabulary: Vocabulary
    _ordinals: dict[str, int] = PrivateAttr(default_factory=dict)

    def model_post_init(self, __context) -> None:
        self._ordinals = {document.doc_id: ordinal
                          for ordinal, document in enumerate(self.documents)}

    def __len__(self) -> int:
        return len(self.documents)

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._ordinals

    def ordinal(self, doc_id: str) -> int:
        try:
            return self._ordinals[doc_id]
        except KeyError:
            raise CorpusError(
                f'Документ {doc_id} не найден в корпусе') from None

    def document(self, doc_id: str) -> Document:
        return self.documents[self.ordinal(doc_id)]


class SentenceScores(BaseModel):
    """Логиты селектора по предложениям и, после нормализации,
    распределение p(s_i | q, d). -inf помечает пустые предложения."""
    model_config = ConfigDict(frozen=True)

    logits: tuple[float, ...]
    probabilities: tuple[float, ...] | None = None

    @model_validator(mode='after')
    def check_probabilities(self) -> 'SentenceScores':
        if self.probabilities is None:
            return self
        if len(self.probabilities) != len(self.logits):
            raise ValueError('Длины logits и probabilities различаются')
        if any(value < 0 for value in self.probabilities):
            raise ValueError('Отрицательная вероятность')
        if abs(math.fsum(self.probabilities) - 1.0) > 1e-9:
            raise ValueError('Вероятности не суммируются в 1')
        return self


class Summary(BaseModel):
    """Выбранные предложения документа в исходном порядке."""
    model_config = ConfigDict(frozen=True)

    indices: tuple[int, ...]
    k: int = Field(ge=1)
    token_ids: tuple[int, ...]
    token_origins: tuple[int, ...]

    @model_validator(mode='after')
    def check_order(self) -> 'Summary':
        if any(left >= right for left, right
               in zip(self.indices, self.indices[1:])):
            raise ValueError(f'Индексы не возрастают: {self.indices}')
        if len(self.token_ids) != len(self.token_origins):
            raise ValueError('token_origins не совпадает с token_ids')
        return self


class RankerInput(BaseModel):
    """Вход ранкера: [CLS] q [SEP] d̂ [SEP] и номер предложения для
    каждого токена сводки (None для запроса и служебных токенов)."""
    model_config = ConfigDict(frozen=True)

    token_ids: tuple[int, ...]
    sentence_origins: tuple[int | None, ...]
    length: int

    @model_validator(mode='after')
    def check_length(self) -> 'RankerInput':
        if not (len(self.token_ids) == len(self.sentence_origins)
                == self.length):
            raise ValueError('Длины полей RankerInput не совпадают')
        return self


class Triple(BaseModel):
    model_config = ConfigDict(frozen=True)

    query_id: str
    positive_id: str
    negative_id: str


class RankerConfig(BaseModel):
    """Гиперпараметры архитектуры ранкера."""
    model_config = ConfigDict(frozen=True)

    vocab_size: int = Field(gt=len(SPECIAL_TOKENS) - 1)
    model_dim: int = Field(default=config.MODEL_DIM, ge=1)
    num_layers: int = Field(default=config.NUM_LAYERS, ge=1)
    num_heads: int = Field(default=config.NUM_HEADS, ge=1)
    ff_dim: int = Field(default=config.FF_DIM, ge=1)
    max_len: int = Field(default=config.MAX_LEN, ge=4)
    dropout: float = Field(default=config.DROPOUT, ge=0.0, lt=1.0)

    @model_validator(mode='after')
    def check_heads(self) -> 'RankerConfig':
        if self.model_dim % self.num_heads:
            raise ValueError('model_dim должен делиться на num_heads')
        return self


class SelectorConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: SelectorKind = 'linear'
    embedding_name: str = 'embedding'
    embedding_dim: int = Field(default=config.MODEL_DIM, ge=1)
    hidden_size: int = Field(default=config.SELECTOR_HIDDEN, ge=1)
    shared_projection: bool = True

    @property
    def trainable(self) -> bool:
        return self.kind in TRAINABLE_SELECTORS


class ModelSpec(BaseModel):
    """Описание архитектуры, сохраняемое в заголовке контрольной точки."""
    model_config = ConfigDict(frozen=True)

    mode: TrainingMode
    selector: SelectorConfig
    ranker: RankerConfig


class TrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    mode: TrainingMode = 'e2e'
    selector: SelectorKind = 'linear'
    k: int = Field(default=config.DEFAULT_K, ge=1)
    temperature: float = Field(default=config.DEFAULT_TEMPERATURE, gt=0)
    margin: float = Field(default=config.MARGIN, gt=0)
    selector_lr: float = Field(default=config.SELECTOR_LR, gt=0)
    ranker_lr: float = Field(default=config.RANKER_LR, gt=0)
    weight_decay: float = Field(default=config.WEIGHT_DECAY, ge=0)
    batch_size: int = Field(default=config.BATCH_SIZE, ge=1)
    warmup: int = Field(default=config.WARMUP_BATCHES, ge=0)
    epochs: int = Field(default=config.EPOCHS, ge=1)
    triples_per_epoch: int = Field(default=config.TRIPLES_PER_EPOCH, ge=1)
    selector_epochs: int = Field(default=config.SELECTOR_EPOCHS, ge=0)
    seed: int = config.SEED
    head_limit: int | None = Field(default=None, ge=1)
    token_weighting: Literal['relaxed', 'softmax'] = 'relaxed'

    @model_validator(mode='after')
    def check_selector(self) -> 'TrainConfig':
        if self.mode == 'e2e' and self.selector not in TRAINABLE_SELECTORS:
            raise ValueError(
                f'Режим e2e требует обучаемого селектора, '
                f'получен {self.selector}')
        return self


class ExplainedSentence(BaseModel):
    index: int
    text: str
    logit: float | None
    probability: float | None
    selected: bool


class Explanation(BaseModel):
    """Запись-объяснение: оценка ранкера и выбранные предложения."""
    query_id: str
    doc_id: str
    score: float
    sentences: list[ExplainedSentence]

    @property
    def selected_indices(self) -> list[int]:
        return [item.index for item in self.sentences if item.selected]


class RunEntry(BaseModel):
    model_config = ConfigDict(frozen=True)

    doc_id: str
    score: float


class RunFile(BaseModel):
    """Ранжирование по запросам в порядке возрастания ранга."""
    model_config = ConfigDict(frozen=True)

    tag: str
    rankings: dict[str, tuple[RunEntry, ...]]

    @model_validator(mode='after')
    def check_rankings(self) -> 'RunFile':
        for query_id, entries in self.rankings.items():
            doc_ids = [entry.doc_id for entry in entries]
            if len(set(doc_ids)) != len(doc_ids):
                raise ValueError(f'{query_id}: повторяющиеся документы')
            if any(left.score < right.score
                   for left, right in zip(entries, entries[1:])):
                raise ValueError(f'{query_id}: оценки не убывают')
        return self

    def doc_ids(self, query_id: str) -> list[str]:
        return [entry.doc_id for entry in self.rankings.get(query_id, ())]


class Qrels(BaseModel):
    model_config = ConfigDict(frozen=True)

    judgments: dict[str, dict[str, int]]

    @field_validator('judgments')
    @classmethod
    def check_grades(cls, value):
        for query_id, grades in value.items():
            if any(grade < 0 for grade in grades.values()):
                raise ValueError(f'{query_id}: отрицательная релевантность')
        return value

    def for_query(self, query_id: str) -> dict[str, int]:
        return self.judgments.get(query_id, {})

    def relevant_count(self, query_id: str) -> int:
        return sum(1 for grade in self.for_query(query_id).values()
                   if grade >= 1)


class MetricTable(BaseModel):
    metric_names: tuple[str, ...]
    per_query: dict[str, dict[str, float]]
    means: dict[str, float]


class TrainingLogRecord(BaseModel):
    phase: Literal['selector', 'ranker'] = 'ranker'
    epoch: int
    step: int | None = None
    loss: float | None = None
    lr: float | None = None
    validation_map: float | None = None


class TrainingReport(BaseModel):
    """Модель отчета о результатах обучения."""
    steps_total: int = 0
    steps_skipped: int = 0
    best_epoch: int = 0
    best_validation_map: float = 0.0
    selector_pairs: int = 0


class RankingReport(BaseModel):
    """Модель отчета о переранжировании по запросам."""
    queries_total: int = 0
    queries_success: int = 0
    queries_fail: int = 0
    queries_fail_list: list[str] = []


def _split_csv(value):
    if isinstance(value, str):
        return tuple(item.strip() for item in value.split(',')
                     if item.strip())
    return value


class RunConfig(BaseModel):
    """Полная конфигурация запуска. Неизвестные ключи отклоняются."""
    model_config = ConfigDict(extra='forbid', frozen=True)

    # Исходные данные (относительно data_input).
    corpus_path: Path | None = None
    queries_path: Path | None = None
    qrels_path: Path | None = None
    embeddings_path: Path | None = None
    # Артефакты (относительно data_output).
    index_path: Path = Path(config.INDEX_FILE_NAME)
    run_in_path: Path = Path(config.FIRST_STAGE_RUN_NAME)
    run_out_path: Path = Path(config.RERANKED_RUN_NAME)
    checkpoint_path: Path = Path(config.CHECKPOINT_NAME)
    init_checkpoint: Path | None = None
    training_log_path: Path = Path(config.TRAINING_LOG_NAME)
    report_path: Path = Path(config.REPORT_NAME)
    explanations_path: Path = Path(config.EXPLANATIONS_NAME)
    analysis_path: Path = Path(config.ANALYSIS_NAME)

    selector: SelectorKind = 'linear'
    mode: TrainingMode = 'e2e'
    k: int = Field(default=config.DEFAULT_K, ge=1)
    k_sweep: tuple[int, ...] | None = None
    head_limit: int | None = Field(default=None, ge=1)
    temperature: float = Field(default=config.DEFAULT_TEMPERATURE, gt=0)
    token_weighting: Literal['relaxed', 'softmax'] = 'relaxed'
    margin: float = Field(default=config.MARGIN, gt=0)
    selector_lr: float = Field(default=config.SELECTOR_LR, gt=0)
    ranker_lr: float = Field(default=config.RANKER_LR, gt=0)
    weight_decay: float = Field(default=config.WEIGHT_DECAY, ge=0)
    batch_size: int = Field(default=config.BATCH_SIZE, ge=1)
    warmup: int = Field(default=config.WARMUP_BATCHES, ge=0)
    epochs: int = Field(default=config.EPOCHS, ge=1)
    triples_per_epoch: int = Field(default=config.TRIPLES_PER_EPOCH, ge=1)
    selector_epochs: int = Field(default=config.SELECTOR_EPOCHS, ge=0)
    validation_fraction: float = Field(
        default=config.VALIDATION_FRACTION, ge=0, lt=1)
    selector_fraction: float = Field(
        default=config.SELECTOR_FRACTION, ge=0, lt=1)
    seed: int = config.SEED

    max_len: int = Field(default=config.MAX_LEN, ge=4)
    model_dim: int = Field(default=config.MODEL_DIM, ge=1)
    num_layers: int = Field(default=config.NUM_LAYERS, ge=1)
    num_heads: int = Field(default=config.NUM_HEADS, ge=1)
    ff_dim: int = Field(default=config.FF_DIM, ge=1)
    dropout: float = Field(default=config.DROPOUT, ge=0, lt=1)
    selector_hidden: int = Field(default=config.SELECTOR_HIDDEN, ge=1)
    shared_projection: bool = True

    depth: int = Field(default=config.FIRST_STAGE_DEPTH, ge=1)
    bm25_k1: float = Field(default=config.BM25_K1, ge=0)
    bm25_b: float = Field(default=config.BM25_B, ge=0, le=1)

    cutoffs: tuple[int, ...] = config.METRIC_CUTOFFS
    ndcg_gain: Literal['linear', 'exponential'] = 'linear'
    head_budget: int | None = Field(default=None, ge=0)
    run_tag: str = config.RUN_TAG
    workers: int = Field(default=config.WORKERS, ge=1)
    log_level: Literal['DEBUG', 'INFO', 'WARNING', 'ERROR'] = 'INFO'

    @field_validator('cutoffs', 'k_sweep', mode='before')
    @classmethod
    def split_tuples(cls, value):
        return _split_csv(value)

    @field_validator('selector', mode='before')
    @classmethod
    def selector_none(cls, value):
        # Значение `none` из файла приходит как None.
        return 'none' if value is None else value

    @model_validator(mode='after')
    def check_fractions(self) -> 'RunConfig':
        if self.validation_fraction + self.selector_fraction >= 1:
            raise ValueError('Доли validation и selector в сумме >= 1')
        return self

    def input_file(self, field: str) -> Path:
        """Путь к исходным данным; относительные пути берутся
        из папки data_input."""
        value = getattr(self, field)
        if value is None:
            raise ConfigError(f'Не задан параметр {field}')
        return config.INPUT_DATA_DIR / value

    def artifact_file(self, field: str) -> Path:
        """Путь к артефакту; относительные пути - из папки data_output."""
        value = getattr(self, field)
        if value is None:
            raise ConfigError(f'Не задан параметр {field}')
        return config.RESULTS_DIR / value

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            mode=self.mode,
            selector=self.selector,
            k=self.k,
            temperature=self.temperature,
            margin=self.margin,
            selector_lr=self.selector_lr,
            ranker_lr=self.ranker_lr,
            weight_decay=self.weight_decay,
            batch_size=self.batch_size,
            warmup=self.warmup,
            epochs=self.epochs,
            triples_per_epoch=self.triples_per_epoch,
            selector_epochs=self.selector_epochs,
            seed=self.seed,
            head_limit=self.head_limit,
            token_weighting=self.token_weighting,
        )

    def model_spec(self, vocab_size: int) -> ModelSpec:
        # В e2e эмбеддинг E общий для селектора и ранкера.
        shared = self.mode == 'e2e'
        return ModelSpec(
            mode=self.mode,
            selector=SelectorConfig(
                kind=self.selector,
                embedding_name='embedding' if shared
                else 'selector.embedding',
                embedding_dim=self.model_dim,
                hidden_size=self.selector_hidden,
                shared_projection=self.shared_projection,
            ),
            ranker=RankerConfig(
                vocab_size=vocab_size,
                model_dim=self.model_dim,
                num_layers=self.num_layers,
                num_heads=self.num_heads,
                ff_dim=self.ff_dim,
                max_len=self.max_len,
                dropout=self.dropout,
            ),
        )
