"""Токенизация, разбиение на предложения, загрузка корпуса и
статических эмбеддингов."""
import logging
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ValidationError

import config
from domain.exceptions import (CorpusFormatError, DuplicateDocumentError,
                               EmbeddingFormatError)
from domain.models import (SPECIAL_TOKENS, Corpus, Document, Query,
                           Sentence, Vocabulary)

_TOKEN_PATTERN = re.compile(r'[^\W_]+')
_SENTENCE_BOUNDARY = re.compile(r'(?<=[.!?])\s+')


class RawDocument(BaseModel):
    """Запись входного файла корпуса."""
    doc_id: str
    text: str


def tokenize(text: str) -> list[str]:
    """Нижний регистр, разбиение по последовательностям
    не-буквенно-цифровых символов."""
    return _TOKEN_PATTERN.findall(text.lower())


def segment_sentences(text: str) -> list[str]:
    """Разбиение после '.', '!' или '?', за которыми идет пробельный
    символ или конец текста. Знак остается в своем предложении."""
    return [part.strip() for part in _SENTENCE_BOUNDARY.split(text)
            if part.strip()]


def truncate_sentences(
    sentences: list[list[str]],
    max_sentences: int = config.MAX_SENTENCES,
    max_tokens: int = config.MAX_DOCUMENT_TOKENS,
) -> int:
    """Возвращает число сохраняемых предложений: сначала не больше
    max_sentences, затем предложение, пересекающее лимит токенов,
    отбрасывается целиком вместе с хвостом."""
    kept = 0
    total = 0
    for tokens in sentences[:max_sentences]:
        if total + len(tokens) > max_tokens:
            break
        total += len(tokens)
        kept += 1
    return kept


def ingest_corpus(path: Path) -> Corpus:
    """Загружает корпус из файла с JSON-записями по строкам.

    Идентификаторы токенов назначаются в порядке первого появления,
    поэтому повторная загрузка того же файла дает тот же словарь."""
    parsed: list[tuple[str, list[str], list[list[str]]]] = []
    seen: set[str] = set()
    with open(path, 'r', encoding='utf-8') as file:
        for line_number, line in enumerate(file, start=1):
            if not line.strip():
                continue
            try:
                record = RawDocument.model_validate_json(line)
            except ValidationError as e:
                raise CorpusFormatError(
                    f'{path}: строка {line_number}: некорректная запись: '
                    f'{e.errors()[0]["msg"]}') from e
            if record.doc_id in seen:
                raise DuplicateDocumentError(
                    f'{path}: строка {line_number}: повторный doc_id '
                    f'{record.doc_id}')
            seen.add(record.doc_id)
            texts = segment_sentences(record.text)
            tokens = [tokenize(text) for text in texts]
            kept = truncate_sentences(tokens)
            parsed.append((record.doc_id, texts[:kept], tokens[:kept]))

    token_to_id = {token: index for index, token in enumerate(SPECIAL_TOKENS)}
    frequency: Counter = Counter()
    documents = []
    for doc_id, texts, tokens in parsed:
        sentences = []
        for text, sentence_tokens in zip(texts, tokens):
            for token in sentence_tokens:
                token_to_id.setdefault(token, len(token_to_id))
            sentences.append(Sentence(
                text=text,
                token_ids=tuple(token_to_id[token]
                                for token in sentence_tokens)))
        document = Document.from_sentences(doc_id, sentences)
        frequency.update(set(document.token_stream()))
        documents.append(document)

    id_to_token = tuple(token_to_id)
    count = len(documents)
    average = (sum(item.total_tokens for item in documents) / count
               if count else 0.0)
    vocabulary = Vocabulary(
        id_to_token=id_to_token,
        token_to_id=token_to_id,
        document_frequency=tuple(frequency[index]
                                 for index in range(len(id_to_token))),
        document_count=count,
        average_document_length=average,
    )
    logging.info(f'Загружено документов: {count}, '
                 f'размер словаря: {len(vocabulary)}')
    return Corpus(documents=tuple(documents), vocabulary=vocabulary)


def encode_query(query_id: str, text: str, vocabulary: Vocabulary) -> Query:
    tokens = tokenize(text)[:config.MAX_QUERY_TOKENS]
    return Query(query_id=query_id, text=text,
                 token_ids=tuple(vocabulary.encode(tokens)))


@dataclass(frozen=True)
class EmbeddingTable:
    """Статические векторы по идентификаторам токенов словаря.
    Токены, которых нет в файле, получают нулевой вектор."""
    dimension: int
    vectors: np.ndarray

    def lookup(self, token_ids) -> np.ndarray:
        return self.vectors[np.asarray(token_ids, dtype=np.int64)]


def load_embeddings(path: Path, vocabulary: Vocabulary) -> EmbeddingTable:
    """Читает текстовый формат word2vec: токен и D чисел в строке.
    Строка-заголовок '<число> <размерность>' пропускается."""
    rows: dict[int, np.ndarray] = {}
    dimension = None
    with open(path, 'r', encoding='utf-8') as file:
        for line_number, line in enumerate(file, start=1):
            parts = line.split()
            if not parts:
                continue
            if line_number == 1 and len(parts) == 2 and all(
                    part.isdigit() for part in parts):
                continue
            token, values = parts[0], parts[1:]
            if dimension is None:
                dimension = len(values)
            if len(values) != dimension or not values:
                raise EmbeddingFormatError(
                    f'{path}: строка {line_number}: размерность '
                    f'{len(values)} вместо {dimension}')
            token_id = vocabulary.token_to_id.get(token)
            if token_id is None or vocabulary.is_special(token_id):
                continue
            try:
                rows[token_id] = np.array(values, dtype=np.float64)
            except ValueError as e:
                raise EmbeddingFormatError(
                    f'{path}: строка {line_number}: не число') from e
    if dimension is None:
        raise EmbeddingFormatError(f'{path}: файл эмбеддингов пуст')
    vectors = np.zeros((len(vocabulary), dimension), dtype=np.float64)
    for token_id, vector in rows.items():
        vectors[token_id] = vector
    logging.info(f'Загружено векторов: {len(rows)} из {len(vocabulary)}')
    return EmbeddingTable(dimension=dimension, vectors=vectors)
