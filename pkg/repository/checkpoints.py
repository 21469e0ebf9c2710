"""Контейнер именованных тензоров.

Формат файла: длина заголовка ('<Q'), json-заголовок со спецификацией
модели и списком (имя, форма, смещение) тензоров, затем значения
тензоров в порядке заголовка как little-endian float32."""
import abc
import struct
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError

import config
from domain.exceptions import CheckpointError
from domain.models import ModelSpec

_LENGTH = struct.Struct('<Q')
_PAYLOAD_DTYPE = np.dtype('<f4')


class TensorEntry(BaseModel):
    name: str
    shape: tuple[int, ...]
    offset: int


class CheckpointHeader(BaseModel):
    """Заголовок контрольной точки: загрузка самодостаточна."""
    spec: ModelSpec
    seed: int
    tensors: list[TensorEntry]


class Checkpoint(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    spec: ModelSpec
    seed: int
    arrays: dict[str, np.ndarray]


class AbstractCheckpointRepository(abc.ABC):
    """Абстрактный репозиторий контрольных точек."""

    def save(self, checkpoint: Checkpoint) -> None:
        """Метод для сохранения контрольной точки в репозиторий."""
        self._save(checkpoint)

    @abc.abstractmethod
    def _save(self, checkpoint: Checkpoint) -> None:
        raise NotImplementedError

    def get(self) -> Checkpoint:
        """Метод для получения контрольной точки из репозитория."""
        return self._get()

    @abc.abstractmethod
    def _get(self) -> Checkpoint:
        raise NotImplementedError


class BinaryCheckpointRepository(AbstractCheckpointRepository):

    def __init__(
        self,
        path: Path = config.RESULTS_DIR / config.CHECKPOINT_NAME,
    ) -> None:
        super().__init__()
        self._path = path

    def _save(self, checkpoint: Checkpoint) -> None:
        entries = []
        chunks = []
        offset = 0
        for name in sorted(checkpoint.arrays):
            array = np.ascontiguousarray(checkpoint.arrays[name],
                                         dtype=_PAYLOAD_DTYPE)
            entries.append(TensorEntry(name=name, shape=array.shape,
                                       offset=offset))
            chunks.append(array.tobytes())
            offset += array.size
        header = CheckpointHeader(spec=checkpoint.spec, seed=checkpoint.seed,
                                  tensors=entries)
        header_bytes = header.model_dump_json().encode('utf-8')
        self._path.parent.mkdir(parents=True, exist_ok=True)
        with open(self._path, 'wb') as file:
            file.write(_LENGTH.pack(len(header_bytes)))
            file.write(header_bytes)
            for chunk in chunks:
                file.write(chunk)

    def _get(self) -> Checkpoint:
        if not self._path.exists():
            raise CheckpointError(f'Контрольная точка не найдена: '
                                  f'{self._path}')
        data = self._path.read_bytes()
        if len(data) < _LENGTH.size:
            raise CheckpointError(f'{self._path}: файл обрезан')
        (length,) = _LENGTH.unpack_from(data)
        start = _LENGTH.size + length
        try:
            header = CheckpointHeader.model_validate_json(
                data[_LENGTH.size:start])
        except ValidationError as e:
            raise CheckpointError(f'{self._path}: поврежденный заголовок'
                                  ) from e
        tail = len(data) - start
        if tail < 0 or tail % _PAYLOAD_DTYPE.itemsize:
            raise CheckpointError(f'{self._path}: файл обрезан')
        payload = np.frombuffer(data, dtype=_PAYLOAD_DTYPE, offset=start)
        arrays = {}
        for entry in header.tensors:
            size = int(np.prod(entry.shape, dtype=np.int64))
            if entry.offset + size > payload.size:
                raise CheckpointError(
                    f'{self._path}: тензор {entry.name} выходит за пределы '
                    'файла')
            arrays[entry.name] = payload[
                entry.offset:entry.offset + size].astype(np.float64).reshape(
                    entry.shape)
        return Checkpoint(spec=header.spec, seed=header.seed, arrays=arrays)
