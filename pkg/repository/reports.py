"""Отчеты: таблица метрик (tsv или Excel), построчные json-записи
(журнал обучения, объяснения) и распределение пропущенных токенов."""
import abc
import csv
from pathlib import Path
from typing import Generic, Sequence, TypeVar

import openpyxl
from openpyxl.styles import Font
from openpyxl.worksheet.worksheet import Worksheet
from pydantic import BaseModel

from domain.models import MetricTable

ALL_QUERIES = 'all'
RecordT = TypeVar('RecordT', bound=BaseModel)


def _metric_rows(table: MetricTable) -> list[tuple]:
    rows = [(query_id, *(values[name] for name in table.metric_names))
            for query_id, values in table.per_query.items()]
    rows.append((ALL_QUERIES,
                 *(table.means[name] for name in table.metric_names)))
    return rows


class AbstractMetricRepository(abc.ABC):
    """Абстрактный репозиторий отчетов с метриками."""

    def save(self, table: MetricTable) -> None:
        """Метод для сохранения таблицы метрик в репозиторий."""
        self._save(table)

    @abc.abstractmethod
    def _save(self, table: MetricTable) -> None:
        raise NotImplementedError


class TsvMetricRepository(AbstractMetricRepository):
    """Метрики по запросам построчно и итоговая строка `all`."""

    def __init__(self, path: Path) -> None:
        super().__init__()
        self._path = path

    def _save(self, table: MetricTable) -> None:
        self._path.parent.mkdir(parents=True, exist_ok=True)
        with open(self._path, 'w', newline='', encoding='utf-8') as tsv_file:
            writer = csv.writer(tsv_file, delimiter='\t',
                                lineterminator='\n')
            writer.writerow(('query', *table.metric_names))
            for query_id, *values in _metric_rows(table):
                writer.writerow((query_id,
                                 *(f'{value:.4f}' for value in values)))


class ExcelMetricRepository(AbstractMetricRepository):
    """Выгружает таблицу метрик в excel-файл."""

    def __init__(self, path: Path) -> None:
        super().__init__()
        self._path = path

    def _save(self, table: MetricTable) -> None:
        """Создает книгу Excel, наполняет её данными и сохраняет."""
        workbook = openpyxl.Workbook()
        worksheet = workbook.active
        worksheet.title = 'metrics'
        worksheet.append(('Запрос', *table.metric_names))
        rows = _metric_rows(table)
        for row in rows:
            worksheet.append(row)

        last_column = len(table.metric_names) + 1
        last_row = len(rows) + 1
        self._make_cells_bold(worksheet, rows=(1, 1),
                              columns=(1, last_column))
        self._make_cells_bold(worksheet, rows=(last_row, last_row),
                              columns=(1, 1))
        self._adjust_column_width(worksheet, row=1,
                                  columns=(1, last_column))
        self._path.parent.mkdir(parents=True, exist_ok=True)
        workbook.save(self._path)
        workbook.close()

    @staticmethod
    def _make_cells_bold(
        worksheet: Worksheet,
        rows: tuple[int, int],
        columns: tuple[int, int],
    ) -> None:
        bold_font = Font(bold=True)
        for row in range(rows[0], rows[1] + 1):
            for column in range(columns[0], columns[1] + 1):
                worksheet.cell(row, column).font = bold_font

    @staticmethod
    def _adjust_column_width(
        worksheet: Worksheet,
        row: int,
        columns: tuple[int, int],
    ) -> None:
        """Ширина колонки по заголовку с запасом."""
        for column in range(columns[0], columns[1] + 1):
            column_letter = worksheet.cell(row, column).column_letter
            column_width = len(str(worksheet.cell(row, column).value)) + 7
            worksheet.column_dimensions[column_letter].width = column_width


def metric_repository(path: Path) -> AbstractMetricRepository:
    """Excel для путей с расширением .xlsx, иначе tsv."""
    if path.suffix.lower() == '.xlsx':
        return ExcelMetricRepository(path)
    return TsvMetricRepository(path)


class JsonLinesRepository(Generic[RecordT]):
    """Записи pydantic-модели по одной на строку."""

    def __init__(self, path: Path, record_cls: type[RecordT]) -> None:
        self._path = path
        self._record_cls = record_cls

    def add_all(self, records: Sequence[RecordT]) -> None:
        self._path.parent.mkdir(parents=True, exist_ok=True)
        with open(self._path, 'w', encoding='utf-8', newline='\n') as file:
            for record in records:
                file.write(record.model_dump_json() + '\n')

    def get_all(self) -> list[RecordT]:
        with open(self._path, 'r', encoding='utf-8') as file:
            return [self._record_cls.model_validate_json(line)
                    for line in file if line.strip()]


class TsvCdfRepository:
    """Пары (доля пропущенных токенов, накопленная доля пар)."""

    def __init__(self, path: Path) -> None:
        self._path = path

    def save(self, cdf: Sequence[tuple[float, float]]) -> None:
        self._path.parent.mkdir(parents=True, exist_ok=True)
        with open(self._path, 'w', newline='', encoding='utf-8') as tsv_file:
            writer = csv.writer(tsv_file, delimiter='\t',
                                lineterminator='\n')
            writer.writerow(('fraction', 'cumulative'))
            for fraction, cumulative in cdf:
                writer.writerow((f'{fraction:.6f}', f'{cumulative:.6f}'))
