"""Caption encoder: pretrained word-vector table + mean pooling.

The table is any whitespace-delimited text vector file (``word v1 ... vdim``
per line, optional ``count dim`` header). A caption embeds as the mean of the
vectors of its in-vocabulary tokens; lookup tries the exact-case token first,
then the lowercased form. Out-of-vocabulary tokens are skipped and counted,
and an all-OOV caption embeds to the zero vector.
"""

import string
from dataclasses import dataclass

import numpy as np

from .errors import EmptyCaption, EmptyTable, InconsistentDim

_STRIP_CHARS = string.punctuation


@dataclass(frozen=True)
class WordEmbeddingTable:
    dim: int
    entries: dict[str, np.ndarray]

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class CaptionEmbedding:
    vector: np.ndarray
    n_words_used: int
    n_oov: int


def load_vectors(path) -> WordEmbeddingTable:
    """Parse a text word-vector file into an in-memory table.

    The dimension is taken from the header line when present, otherwise
    inferred from the first vector line; every later line must agree.
    """
    dim = None
    entries: dict[str, np.ndarray] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            if dim is None and not entries and len(tokens) == 2:
                try:
                    int(tokens[0]), int(tokens[1])
                except ValueError:
                    pass
                else:
                    dim = int(tokens[1])
                    continue
            word, values = tokens[0], tokens[1:]
            if dim is None:
                dim = len(values)
                if dim == 0:
                    raise InconsistentDim(f"{path}:{lineno}: no vector values")
            if len(values) != dim:
                raise InconsistentDim(
                    f"{path}:{lineno}: expected {dim} values, got {len(values)}"
                )
            try:
                entries[word] = np.array([float(v) for v in values], dtype=np.float64)
            except ValueError as exc:
                raise InconsistentDim(f"{path}:{lineno}: non-numeric value: {exc}") from exc
    if not entries:
        raise EmptyTable(f"{path}: no vector entries")
    return WordEmbeddingTable(dim=dim, entries=entries)


def tokenize(text: str) -> list[str]:
    """Whitespace split with leading/trailing ASCII punctuation stripped."""
    tokens = []
    for raw in text.split():
        tok = raw.strip(_STRIP_CHARS)
        if tok:
            tokens.append(tok)
    return tokens


def lookup(table: WordEmbeddingTable, token: str) -> np.ndarray | None:
    """Exact-case lookup first; lowercase only as a fallback."""
    vec = table.entries.get(token)
    if vec is None:
        vec = table.entries.get(token.lower())
    return vec


def embed_caption(table: WordEmbeddingTable, text: str) -> CaptionEmbedding:
    """Mean of the word vectors of the caption's in-vocabulary tokens."""
    if not table.entries:
        raise EmptyTable("word-embedding table is empty")
    tokens = tokenize(text)
    if not tokens:
        raise EmptyCaption(f"caption {text!r} has no tokens")
    used = []
    n_oov = 0
    for tok in tokens:
        vec = lookup(table, tok)
        if vec is None:
            n_oov += 1
        else:
            used.append(vec)
    if not used:
        return CaptionEmbedding(
            vector=np.zeros(table.dim), n_words_used=0, n_oov=n_oov
        )
    vector = np.mean(np.stack(used), axis=0)
    return CaptionEmbedding(vector=vector, n_words_used=len(used), n_oov=n_oov)
