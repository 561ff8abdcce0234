"""Embedding matrix storage, vocabulary-growth resizing, and zip-tie
initialization of new-token rows from byte-level decompositions.

A freshly appended row starts as seeded Gaussian noise; zip-tie then
overwrites it with the mean of the rows its token decomposes into under
the base tokenizer. With a tied LM head this makes the logit of a new
token the mean of its component-token logits at initialization.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, InputError, InternalError, ShapeError

MAGIC = b"LLEMB\x00\x00\x01"

DEFAULT_INIT_STD = 0.02


def _as_matrix(data: np.ndarray) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim != 2:
        raise ShapeError(f"embedding matrix must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError("embedding matrix contains non-finite values")
    return arr


@dataclass(frozen=True)
class EmbeddingMatrix:
    """rows x dims float32 matrix; immutable after construction."""

    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _as_matrix(self.data))
        self.data.setflags(write=False)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def dims(self) -> int:
        return self.data.shape[1]

    def save(self, path: str | Path) -> None:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<QQ", self.rows, self.dims))
            fh.write(np.ascontiguousarray(self.data, dtype="<f4").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "EmbeddingMatrix":
        raw = Path(path).read_bytes()
        if len(raw) < len(MAGIC) + 16 or raw[: len(MAGIC)] != MAGIC:
            raise FormatError(f"{path} is not an embedding file (bad magic)")
        rows, dims = struct.unpack_from("<QQ", raw, len(MAGIC))
        body = raw[len(MAGIC) + 16 :]
        expected = rows * dims * 4
        if len(body) != expected:
            raise FormatError(
                f"{path}: expected {expected} data bytes for {rows}x{dims}, got {len(body)}"
            )
        data = np.frombuffer(body, dtype="<f4").reshape(rows, dims)
        return cls(data.astype(np.float32))


def resize(emb: EmbeddingMatrix, new_rows: int, seed: int, init_std: float = DEFAULT_INIT_STD) -> EmbeddingMatrix:
    """Grow the matrix; appended rows are N(0, init_std^2) from the seed."""
    if new_rows < emb.rows:
        raise ConfigError(f"cannot shrink embedding from {emb.rows} to {new_rows} rows")
    if new_rows == emb.rows:
        return emb
    rng = np.random.default_rng(seed)
    extra = rng.normal(0.0, init_std, size=(new_rows - emb.rows, emb.dims)).astype(np.float32)
    return EmbeddingMatrix(np.vstack([emb.data, extra]))


@dataclass(frozen=True)
class ZipTiePlan:
    """Per new-token row: component row ids and convex weights.

    entries maps target row index -> (component ids, weights); weights for
    each target sum to 1.
    """

    entries: dict[int, tuple[tuple[int, ...], tuple[float, ...]]]
    base_rows: int


def build_plan(new_tokens, base_tokenizer, base_rows: int | None = None, strategy: str = "uniform") -> ZipTiePlan:
    """Decompose each new token with the base tokenizer, uniform weights.

    new_tokens: iterable of (target_row, token_bytes) pairs, or a merged
    vocabulary-like object with .tokens, in which case every token at an
    index >= base vocabulary size is treated as new.
    """
    if strategy != "uniform":
        raise ConfigError(f"unknown plan strategy {strategy!r} (only 'uniform' ships)")
    if base_rows is None:
        base_rows = base_tokenizer.vocab.size

    if hasattr(new_tokens, "tokens"):
        pairs = [(i, t) for i, t in enumerate(new_tokens.tokens) if i >= base_rows]
    else:
        pairs = list(new_tokens)

    entries: dict[int, tuple[tuple[int, ...], tuple[float, ...]]] = {}
    for target, token in pairs:
        if isinstance(token, str):
            token = token.encode("utf-8")
        if token in base_tokenizer.vocab:
            ids = [base_tokenizer.vocab.id_of[token]]
        else:
            pieces = base_tokenizer._merge_chunk(token)
            ids = [base_tokenizer.vocab.id_of[p] for p in pieces]
        if not ids:
            raise InternalError(f"token for row {target} decomposed to zero pieces")
        w = 1.0 / len(ids)
        entries[target] = (tuple(ids), tuple(w for _ in ids))
    return ZipTiePlan(entries, base_rows)


def zip_tie_init(emb: EmbeddingMatrix, plan: ZipTiePlan) -> EmbeddingMatrix:
    """Overwrite planned rows with the weighted mean of their component rows."""
    out = emb.data.copy()
    for target, (ids, weights) in plan.entries.items():
        if target >= emb.rows:
            raise IndexError(f"plan targets row {target} but matrix has {emb.rows} rows")
        for i in ids:
            if i >= emb.rows:
                raise IndexError(f"plan references component row {i} >= {emb.rows}")
        if len(ids) == 1:
            out[target] = emb.data[ids[0]]
            continue
        group = emb.data[list(ids)].astype(np.float64)
        if len(set(weights)) == 1:
            out[target] = group.mean(axis=0).astype(np.float32)
        else:
            out[target] = np.average(group, axis=0, weights=weights).astype(np.float32)
    return EmbeddingMatrix(out)


def tied_logits(emb: EmbeddingMatrix, hidden: np.ndarray) -> np.ndarray:
    """Logits under a tied LM head: logit_i = row_i . hidden."""
    hidden = np.asarray(hidden, dtype=np.float32)
    if hidden.shape != (emb.dims,):
        raise ShapeError(f"hidden vector shape {hidden.shape} != ({emb.dims},)")
    return emb.data @ hidden
