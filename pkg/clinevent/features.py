"""Lookup vocabularies, embedding tables and context-window encoding."""

from __future__ import annotations

import logging
from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass, field, replace
from enum import StrEnum

import numpy as np

from clinevent.errors import CorpusError, ShapeError
from clinevent.textproc import TokenSequence

logger = logging.getLogger(__name__)

PAD = "<PAD>"
UNK = "<UNK>"
PAD_INDEX = 0
UNK_INDEX = 1


class FeatureKind(StrEnum):
    TOKEN = "token"
    POS = "pos"
    SHAPE = "shape"


CHANNELS = (FeatureKind.TOKEN, FeatureKind.POS, FeatureKind.SHAPE)


@dataclass
class Vocabulary:
    """Dense string <-> index bijection; index 0 is PAD and 1 is UNK."""

    kind: FeatureKind
    entries: list[str] = field(default_factory=lambda: [PAD, UNK])
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.entries[:2] != [PAD, UNK]:
            msg = f"{self.kind} vocabulary must start with {PAD}, {UNK}"
            raise CorpusError(msg)
        self._index = {}
        for i, entry in enumerate(self.entries):
            if entry in self._index:
                msg = f"{self.kind} vocabulary repeats {entry!r}"
                raise CorpusError(msg)
            self._index[entry] = i

    def normalize(self, value: str) -> str:
        return value.lower() if self.kind is FeatureKind.TOKEN else value

    def add(self, value: str) -> int:
        """Index of ``value``, adding it when unseen."""
        key = self.normalize(value)
        if key not in self._index:
            self._index[key] = len(self.entries)
            self.entries.append(key)
        return self._index[key]

    def index(self, value: str) -> int:
        return self._index.get(self.normalize(value), UNK_INDEX)

    def lookup(self, entry: str) -> int | None:
        """Exact entry lookup, without normalization or UNK fallback."""
        return self._index.get(entry)

    def word(self, index: int) -> str:
        return self.entries[index]

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class VocabularySet:
    token: Vocabulary
    pos: Vocabulary
    shape: Vocabulary

    def __iter__(self) -> Iterator[Vocabulary]:
        return iter((self.token, self.pos, self.shape))


def build_vocabularies(sequences: Iterable[TokenSequence]) -> VocabularySet:
    """Index every training token, tag and shape in first-occurrence order."""
    vocabs = VocabularySet(*(Vocabulary(kind) for kind in CHANNELS))
    seen = 0
    for sequence in sequences:
        for token in sequence:
            if token.pos is None or token.shape is None:
                msg = f"{sequence.doc_id}: token {token.surface!r} has no POS tag or shape"
                raise CorpusError(msg)
            vocabs.token.add(token.surface)
            vocabs.pos.add(token.pos)
            vocabs.shape.add(token.shape)
            seen += 1
    if not seen:
        msg = "cannot build vocabularies from an empty corpus"
        raise CorpusError(msg)
    return vocabs


@dataclass
class EmbeddingTable:
    kind: FeatureKind
    matrix: np.ndarray

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


def init_embeddings(vocab: Vocabulary, dim: int, rng: np.random.Generator, scale: float = 0.05) -> EmbeddingTable:
    """Uniform [-scale, scale] table with a zero PAD row."""
    matrix = rng.uniform(-scale, scale, size=(len(vocab), dim))
    matrix[PAD_INDEX] = 0.0
    return EmbeddingTable(kind=vocab.kind, matrix=matrix)


def load_pretrained(
    lines: Iterable[str],
    token_vocab: Vocabulary,
    dim: int = 300,
    rng: np.random.Generator | None = None,
    scale: float = 0.05,
    table: EmbeddingTable | None = None,
) -> EmbeddingTable:
    """Overwrite token rows with vectors from a GloVe-format text stream.

    Words missing from the stream keep their initialization; the PAD row is
    zeroed last.
    """
    if table is None:
        table = init_embeddings(token_vocab, dim, rng or np.random.default_rng(0), scale)
    matrix = table.matrix.copy()
    hits = 0
    for number, line in enumerate(lines, start=1):
        line = line.rstrip("\r\n").rstrip(" ")
        if not line:
            continue
        fields = line.split(" ")
        if len(fields) != dim + 1:
            msg = f"pretrained vectors line {number}: expected {dim} values, got {len(fields) - 1}"
            raise CorpusError(msg)
        index = token_vocab.lookup(fields[0])
        if index is None or index < 2:
            continue
        try:
            matrix[index] = np.asarray(fields[1:], dtype=np.float64)
        except ValueError as e:
            msg = f"pretrained vectors line {number}: {e}"
            raise CorpusError(msg) from e
        hits += 1
    matrix[PAD_INDEX] = 0.0
    logger.info("pretrained vectors cover %d of %d token entries", hits, len(token_vocab) - 2)
    return EmbeddingTable(kind=table.kind, matrix=matrix)


@dataclass(frozen=True, eq=False)
class WindowInstance:
    """2w+1 rows of (token, pos, shape) indices centred on one token."""

    center: int
    width: int
    rows: np.ndarray
    label: int | None = None

    def with_label(self, label: int) -> WindowInstance:
        """Copy of the window carrying a class index."""
        return replace(self, label=label)


def encode_sequence(tokens: TokenSequence, vocabs: VocabularySet) -> np.ndarray:
    """Index matrix of shape (n, 3) for a tagged sequence produced by textproc."""
    if not isinstance(tokens, TokenSequence):
        msg = "feature extraction requires a TokenSequence from clinevent.textproc"
        raise TypeError(msg)
    encoded = np.zeros((len(tokens), 3), dtype=np.int64)
    for i, token in enumerate(tokens):
        if token.pos is None or token.shape is None:
            msg = f"{tokens.doc_id}: token {token.surface!r} has no POS tag or shape"
            raise CorpusError(msg)
        encoded[i] = (vocabs.token.index(token.surface), vocabs.pos.index(token.pos), vocabs.shape.index(token.shape))
    return encoded


def window_from_encoded(encoded: np.ndarray, center: int, width: int) -> WindowInstance:
    """Window of pre-encoded token rows around ``center``, PAD outside the document."""
    if width < 1:
        msg = f"window width must be >= 1, got {width}"
        raise ValueError(msg)
    n = len(encoded)
    if not 0 <= center < n:
        msg = f"center {center} outside sequence of length {n}"
        raise IndexError(msg)
    rows = np.zeros((2 * width + 1, 3), dtype=np.int64)
    lo, hi = max(0, center - width), min(n, center + width + 1)
    offset = center - width
    rows[lo - offset : hi - offset] = encoded[lo:hi]
    return WindowInstance(center=center, width=width, rows=rows)


def extract_window(tokens: TokenSequence, center: int, width: int, vocabs: VocabularySet) -> WindowInstance:
    """Window around ``center``; positions outside the document are PAD rows."""
    return window_from_encoded(encode_sequence(tokens, vocabs), center, width)


def iter_windows(encoded: np.ndarray, width: int) -> list[WindowInstance]:
    """One window per token of an encoded sequence."""
    padded = np.pad(encoded, ((width, width), (0, 0)))
    size = 2 * width + 1
    return [WindowInstance(center=i, width=width, rows=padded[i : i + size].copy()) for i in range(len(encoded))]


def embed_rows(rows: np.ndarray, tables: Sequence[EmbeddingTable]) -> np.ndarray:
    """Concatenate token, POS and shape vectors along the last axis of an index array."""
    columns = []
    for k, table in enumerate(tables):
        indices = rows[..., k]
        if indices.min(initial=0) < 0 or indices.max(initial=0) >= table.size:
            msg = f"{table.kind} index out of table bounds (size {table.size})"
            raise ShapeError(msg)
        columns.append(table.matrix[indices])
    return np.concatenate(columns, axis=-1)


def embed(window: WindowInstance, tables: Sequence[EmbeddingTable]) -> np.ndarray:
    """(2w+1) x d matrix: token, POS and shape vectors of every window row."""
    return embed_rows(window.rows, tables)
