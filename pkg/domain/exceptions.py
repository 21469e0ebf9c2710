class SelectAndRankError(Exception):
    """Базовое исключение приложения."""


class AutodiffError(SelectAndRankError):
    """Ошибка при построении или обходе графа дифференцирования."""


class ShapeMismatchError(AutodiffError):
    pass


class IndexOutOfRangeError(AutodiffError):
    pass


class NonScalarBackwardError(AutodiffError):
    pass


class CorpusError(SelectAndRankError):
    """Ошибка при загрузке корпуса, запросов или эмбеддингов."""


class CorpusFormatError(CorpusError):
    pass


class DuplicateDocumentError(CorpusError):
    pass


class EmbeddingFormatError(CorpusError):
    pass


class RetrievalError(SelectAndRankError):
    pass


class SelectionError(SelectAndRankError):
    pass


class SamplingError(SelectAndRankError):
    pass


class RankerError(SelectAndRankError):
    pass


class TrainingError(SelectAndRankError):
    pass


class EvaluationError(SelectAndRankError):
    pass


class ConfigError(SelectAndRankError):
    pass


class CheckpointError(SelectAndRankError):
    pass


class TrecFormatError(EvaluationError):
    """Ошибка разбора файла выдачи, qrels или запросов."""
