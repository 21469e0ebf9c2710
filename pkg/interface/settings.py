"""Загрузка конфигурации запуска: значения по умолчанию, затем файл
`key=value`, затем переопределения из командной строки."""
import logging
from pathlib import Path
from typing import Iterable

import config
from domain.exceptions import ConfigError
from domain.models import RunConfig

NULL_VALUE = 'none'


def parse_pairs(lines: Iterable[str], source: str) -> dict[str, str | None]:
    """Разбирает строки `key=value`; пустые строки и комментарии `#`
    пропускаются, значение `none` означает отсутствие значения."""
    values: dict[str, str | None] = {}
    for line_number, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith('#'):
            continue
        key, separator, value = line.partition('=')
        key = key.strip()
        if not separator or not key:
            raise ConfigError(f'{source}: строка {line_number}: ожидалось '
                              f'key=value, получено "{line}"')
        value = value.strip()
        values[key] = None if value.lower() == NULL_VALUE else value
    return values


def read_config_file(path: Path) -> dict[str, str | None]:
    file_path = config.INPUT_DATA_DIR / path
    if not file_path.exists():
        raise ConfigError(f'Файл конфигурации не найден: {file_path}')
    with open(file_path, 'r', encoding='utf-8') as file:
        return parse_pairs(file, str(file_path))


def resolve_config(config_path: Path | None = None,
                   overrides: Iterable[str] = ()) -> RunConfig:
    """Итоговая конфигурация; неизвестные ключи отклоняются pydantic."""
    values: dict[str, str | None] = {}
    if config_path is not None:
        values.update(read_config_file(config_path))
    values.update(parse_pairs(overrides, '--set'))
    run_config = RunConfig.model_validate(values)
    logging.info(f'Конфигурация: {run_config.model_dump_json()}')
    return run_config
