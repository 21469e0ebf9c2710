import abc
from pathlib import Path

from pydantic import ValidationError

import config
from domain.exceptions import CorpusError
from domain.models import Corpus


class AbstractCorpusRepository(abc.ABC):
    """Абстрактный репозиторий загруженного корпуса."""

    def save(self, corpus: Corpus) -> None:
        """Метод для сохранения корпуса в репозиторий."""
        self._save(corpus)

    @abc.abstractmethod
    def _save(self, corpus: Corpus) -> None:
        raise NotImplementedError

    def get(self) -> Corpus:
        """Метод для получения корпуса из репозитория."""
        return self._get()

    @abc.abstractmethod
    def _get(self) -> Corpus:
        raise NotImplementedError


class CorpusJsonRepository(AbstractCorpusRepository):
    """Хранит корпус вместе со словарем в json-файле. Инвертированный
    индекс строится по корпусу заново при загрузке."""

    def __init__(
        self,
        path: Path = config.RESULTS_DIR / config.INDEX_FILE_NAME,
    ) -> None:
        super().__init__()
        self._db = path

    def _save(self, corpus: Corpus) -> None:
        self._db.parent.mkdir(parents=True, exist_ok=True)
        self._db.write_text(corpus.model_dump_json(), encoding='utf-8')

    def _get(self) -> Corpus:
        if not self._db.exists():
            raise CorpusError(f'Индекс корпуса не найден: {self._db}. '
                              'Сначала выполните команду ingest')
        try:
            return Corpus.model_validate_json(
                self._db.read_text(encoding='utf-8'))
        except ValidationError as e:
            raise CorpusError(f'{self._db}: поврежденный индекс') from e
