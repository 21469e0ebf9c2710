import argparse
import logging
import sys
from pathlib import Path

from pydantic import ValidationError

from domain.exceptions import SelectAndRankError
from interface.interface import (AnalyzeWorkflow, EvaluateWorkflow,
                                 ExplainWorkflow, IngestWorkflow,
                                 RankWorkflow, RetrieveWorkflow,
                                 TrainWorkflow)
from interface.settings import resolve_config

REGIMES = {
    'ingest': IngestWorkflow,
    'retrieve': RetrieveWorkflow,
    'train': TrainWorkflow,
    'rank': RankWorkflow,
    'explain': ExplainWorkflow,
    'evaluate': EvaluateWorkflow,
    'analyze': AnalyzeWorkflow,
}


def parse_arguments(argv=None):
    """Функция задает возможные аргументы для запуска скрипта
    и парсит аргументы, переданные из командной строки."""
    parser = argparse.ArgumentParser(
        description='Переранжирование документов с отбором предложений.')
    parser.add_argument(
        'command',
        choices=tuple(REGIMES),
        help='Команда: ' + ', '.join(REGIMES),
    )
    parser.add_argument(
        '--config',
        type=Path,
        help='Путь до файла конфигурации key=value (относительно data_input).'
    )
    parser.add_argument(
        '--set',
        action='append',
        default=[],
        metavar='KEY=VALUE',
        help='Переопределение параметра конфигурации; можно повторять.'
    )
    parser.add_argument('--qid', help='Запрос для команды explain.')
    parser.add_argument('--docid', help='Документ для команды explain.')
    return parser, parser.parse_args(argv)


def main(argv=None) -> int:
    """Функция вызывается при запуске приложения из командной строки
    и запускает выбранную команду. Возвращает код завершения."""
    logging.basicConfig(
        level=logging.INFO,
        stream=sys.stdout,
        format='%(asctime)s - %(levelname)s - %(message)s',
    )
    parser, arguments = parse_arguments(argv)
    if (arguments.qid is None) != (arguments.docid is None):
        parser.error('--qid и --docid задаются вместе')
    logging.info(f'Запущена команда {arguments.command}')
    try:
        run_config = resolve_config(arguments.config, arguments.set)
        logging.getLogger().setLevel(run_config.log_level)
        kwargs = {}
        if arguments.command == 'explain':
            kwargs = {'query_id': arguments.qid, 'doc_id': arguments.docid}
        REGIMES[arguments.command](run_config, **kwargs).run()
    except ValidationError as e:
        logging.error(f'Некорректная конфигурация: {e}')
        return 1
    except (SelectAndRankError, OSError) as e:
        logging.error(f'{type(e).__name__}: {e}')
        return 1
    return 0


if __name__ == '__main__':
    sys.exit(main())
