"""Tokenization and pre-trained word vectors."""

from __future__ import annotations

import io
import unicodedata
from functools import lru_cache
from importlib import resources
from typing import BinaryIO, Iterable, Sequence

import numpy as np


class EmbeddingFormatError(ValueError):
    pass


@lru_cache(maxsize=None)
def default_stop_words() -> frozenset:
    text = resources.files("dgn").joinpath("data/stopwords_en.txt").read_text(encoding="utf-8")
    return frozenset(load_stop_words(text.splitlines()))


def load_stop_words(lines: Iterable[str]) -> set:
    return {line.strip().lower() for line in lines if line.strip()}


def _strip_punctuation(text: str) -> str:
    # Any Unicode punctuation or symbol becomes a separator.
    return "".join(" " if unicodedata.category(ch)[0] in "PS" else ch for ch in text)


def normalize(text: str) -> str:
    """Lowercase, punctuation to spaces, whitespace collapsed."""
    return " ".join(_strip_punctuation(text.lower()).split())


def tokenize(text: str, stop_words: Iterable[str] | None = None, remove_stop_words: bool = True) -> list[str]:
    """Lowercase word tokens with punctuation and stop words removed.

    >>> tokenize("When was Erik Watts' father born?")
    ['erik', 'watts', 'father', 'born']
    """
    tokens = normalize(text).split()
    if not remove_stop_words:
        return tokens
    stops = default_stop_words() if stop_words is None else stop_words
    return [t for t in tokens if t not in stops]


class EmbeddingTable:
    """Immutable token -> vector map of a fixed dimension."""

    def __init__(self, tokens: Sequence[str], vectors: np.ndarray):
        vectors = np.asarray(vectors, dtype=np.float32)
        if vectors.ndim != 2 or vectors.shape[0] != len(tokens):
            raise ValueError(f"{len(tokens)} tokens for a vector array of shape {vectors.shape}")
        if vectors.shape[1] < 1:
            raise ValueError("embedding dimension must be positive")
        self.vectors = vectors
        self.vectors.setflags(write=False)
        self.index = {}
        for i, tok in enumerate(tokens):
            self.index.setdefault(tok, i)
        self.tokens = list(tokens)

    @property
    def dimension(self) -> int:
        return self.vectors.shape[1]

    def __len__(self):
        return len(self.index)

    def __contains__(self, token) -> bool:
        return token in self.index

    def get(self, token: str) -> np.ndarray | None:
        """The vector for ``token``, or None when it is absent."""
        i = self.index.get(token)
        return None if i is None else self.vectors[i]

    def __getitem__(self, token: str) -> np.ndarray:
        return self.vectors[self.index[token]]

    def scaled(self, factor: float) -> "EmbeddingTable":
        return EmbeddingTable(self.tokens, self.vectors * factor)


def load_embeddings(source: BinaryIO | str, limit: int | None = None) -> EmbeddingTable:
    """Parse ``token v1 ... vD`` lines (GloVe text format).

    ``source`` is a binary stream or a file path. The dimension comes from the
    first line; the first occurrence of a duplicated token wins.
    """
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, "rb") as fh:
            return load_embeddings(fh, limit=limit)

    tokens: list[str] = []
    rows: list[np.ndarray] = []
    seen = set()
    dim = None
    for lineno, raw in enumerate(source, start=1):
        line = raw.decode("utf-8").rstrip("\r\n")
        if not line.strip():
            continue
        parts = line.rstrip(" ").split(" ")
        token, values = parts[0], parts[1:]
        if dim is None:
            dim = len(values)
            if dim == 0:
                raise EmbeddingFormatError(f"line {lineno}: no vector values")
        if len(values) != dim:
            raise EmbeddingFormatError(f"line {lineno}: expected {dim} values, found {len(values)}")
        try:
            vec = np.array(values, dtype=np.float32)
        except ValueError as exc:
            raise EmbeddingFormatError(f"line {lineno}: malformed number ({exc})") from None
        if token in seen:
            continue
        seen.add(token)
        tokens.append(token)
        rows.append(vec)
        if limit is not None and len(tokens) >= limit:
            break
    if dim is None:
        raise EmbeddingFormatError("empty embedding file")
    return EmbeddingTable(tokens, np.stack(rows))


def dump_embeddings(table: EmbeddingTable, sink: BinaryIO):
    """Write ``table`` back out in the text format :func:`load_embeddings` reads."""
    for tok, i in table.index.items():
        vec = " ".join(repr(float(v)) for v in table.vectors[i])
        sink.write(f"{tok} {vec}\n".encode("utf-8"))


def embeddings_from_text(text: str) -> EmbeddingTable:
    return load_embeddings(io.BytesIO(text.encode("utf-8")))


def embed(tokens: Sequence[str], table: EmbeddingTable) -> tuple[np.ndarray, list[str]]:
    """Stack the vectors of in-vocabulary tokens.

    Out-of-vocabulary tokens are dropped. When nothing survives the matrix has
    zero rows, which callers treat as an empty representation.
    """
    kept = [t for t in tokens if t in table.index]
    if not kept:
        return np.zeros((0, table.dimension), dtype=table.vectors.dtype), []
    return table.vectors[[table.index[t] for t in kept]], kept
