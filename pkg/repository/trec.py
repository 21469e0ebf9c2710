"""Файлы в форматах TREC: выдача, оценки релевантности и запросы."""
import abc
import csv
from pathlib import Path

from pydantic import ValidationError

import config
from domain.exceptions import TrecFormatError
from domain.models import Qrels, Query, RunEntry, RunFile, Vocabulary
from domain.text import encode_query


def _read_lines(path: Path):
    if not path.exists():
        raise TrecFormatError(f'Файл не найден: {path}')
    with open(path, 'r', encoding='utf-8') as file:
        for line_number, line in enumerate(file, start=1):
            if line.strip():
                yield line_number, line.split()


class AbstractRunRepository(abc.ABC):
    """Абстрактный репозиторий выдачи."""

    def save(self, run: RunFile) -> None:
        """Метод для сохранения выдачи в репозиторий."""
        self._save(run)

    @abc.abstractmethod
    def _save(self, run: RunFile) -> None:
        raise NotImplementedError

    def get(self) -> RunFile:
        """Метод для получения выдачи из репозитория."""
        return self._get()

    @abc.abstractmethod
    def _get(self) -> RunFile:
        raise NotImplementedError


class TrecRunRepository(AbstractRunRepository):
    """Выдача в формате `qid Q0 docid rank score tag`. Запросы пишутся
    в порядке словаря rankings, ранги начинаются с 1."""

    def __init__(self, path: Path) -> None:
        super().__init__()
        self._path = path

    def _save(self, run: RunFile) -> None:
        self._path.parent.mkdir(parents=True, exist_ok=True)
        with open(self._path, 'w', encoding='utf-8', newline='\n') as file:
            for query_id, entries in run.rankings.items():
                for rank, entry in enumerate(entries, start=1):
                    file.write(f'{query_id} Q0 {entry.doc_id} {rank} '
                               f'{entry.score!r} {run.tag}\n')

    def _get(self) -> RunFile:
        rows: dict[str, list[tuple[int, RunEntry]]] = {}
        tag = None
        for line_number, parts in _read_lines(self._path):
            if len(parts) != 6:
                raise TrecFormatError(
                    f'{self._path}: строка {line_number}: ожидалось 6 '
                    f'полей, получено {len(parts)}')
            query_id, _, doc_id, rank, score, line_tag = parts
            try:
                entry = RunEntry(doc_id=doc_id, score=float(score))
                rank = int(rank)
            except (ValueError, ValidationError) as e:
                raise TrecFormatError(
                    f'{self._path}: строка {line_number}: {e}') from e
            tag = tag or line_tag
            rows.setdefault(query_id, []).append((rank, entry))

        rankings = {}
        for query_id, items in rows.items():
            items.sort(key=lambda item: item[0])
            ranks = [rank for rank, _ in items]
            if ranks != list(range(1, len(items) + 1)):
                raise TrecFormatError(
                    f'{self._path}: запрос {query_id}: ранги не идут '
                    'подряд с 1')
            rankings[query_id] = tuple(entry for _, entry in items)
        try:
            return RunFile(tag=tag or config.RUN_TAG, rankings=rankings)
        except ValidationError as e:
            raise TrecFormatError(f'{self._path}: {e}') from e


class AbstractQrelsRepository(abc.ABC):
    """Абстрактный репозиторий оценок релевантности."""

    def get(self) -> Qrels:
        """Метод для получения оценок из репозитория."""
        return self._get()

    @abc.abstractmethod
    def _get(self) -> Qrels:
        raise NotImplementedError


class TrecQrelsRepository(AbstractQrelsRepository):
    """Оценки в формате `qid 0 docid rel`."""

    def __init__(self, path: Path) -> None:
        super().__init__()
        self._path = path

    def _get(self) -> Qrels:
        judgments: dict[str, dict[str, int]] = {}
        for line_number, parts in _read_lines(self._path):
            if len(parts) != 4:
                raise TrecFormatError(
                    f'{self._path}: строка {line_number}: ожидалось 4 '
                    f'поля, получено {len(parts)}')
            query_id, _, doc_id, grade = parts
            try:
                grade = int(grade)
            except ValueError as e:
                raise TrecFormatError(
                    f'{self._path}: строка {line_number}: релевантность '
                    f'{grade} не целое число') from e
            grades = judgments.setdefault(query_id, {})
            if doc_id in grades:
                raise TrecFormatError(
                    f'{self._path}: строка {line_number}: повторная оценка '
                    f'({query_id}, {doc_id})')
            grades[doc_id] = grade
        try:
            return Qrels(judgments=judgments)
        except ValidationError as e:
            raise TrecFormatError(f'{self._path}: {e}') from e


class AbstractQueryRepository(abc.ABC):
    """Абстрактный репозиторий запросов."""

    def get_all(self, vocabulary: Vocabulary) -> dict[str, Query]:
        """Метод для получения закодированных запросов по словарю."""
        return self._get_all(vocabulary)

    @abc.abstractmethod
    def _get_all(self, vocabulary: Vocabulary) -> dict[str, Query]:
        raise NotImplementedError


class TsvQueryRepository(AbstractQueryRepository):
    """Запросы в tsv-файле `qid<TAB>текст` без заголовка."""

    def __init__(self, path: Path) -> None:
        super().__init__()
        self._path = path

    def _get_all(self, vocabulary: Vocabulary) -> dict[str, Query]:
        if not self._path.exists():
            raise TrecFormatError(f'Файл не найден: {self._path}')
        queries: dict[str, Query] = {}
        with open(self._path, 'r', newline='', encoding='utf-8') as tsv_file:
            reader = csv.reader(tsv_file, delimiter='\t',
                                quoting=csv.QUOTE_NONE)
            for line_number, row in enumerate(reader, start=1):
                if not row or not ''.join(row).strip():
                    continue
                if len(row) != 2:
                    raise TrecFormatError(
                        f'{self._path}: строка {line_number}: ожидалось '
                        f'2 поля, получено {len(row)}')
                query_id, text = row[0].strip(), row[1]
                if query_id in queries:
                    raise TrecFormatError(
                        f'{self._path}: строка {line_number}: повторный '
                        f'запрос {query_id}')
                queries[query_id] = encode_query(query_id, text, vocabulary)
        return queries
