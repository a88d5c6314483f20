"""Instruction embedding providers and the event vocabulary.

Three interchangeable providers sit behind one interface: a one-hot code over
the event vocabulary (bypasses language entirely), a hashed bag-of-words over
instruction text, and a lookup table loaded from a TSV file for precomputed
vectors. All outputs are float64 and deterministic; none of them learn.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .envgrid import (
    N_COLORS,
    OBJ_KINDS,
    PORTABLE_KINDS,
    CellKind,
    Event,
    EventKind,
)

EMBEDDER_KINDS = ("onehot_event", "hashed_bow", "file_lookup")

# Object kinds admissible per event kind. FACING covers everything visible,
# HOLDING only what fits in a hand, OPENED only doors.
_EVENT_OBJ_KINDS = {
    EventKind.FACING: OBJ_KINDS,
    EventKind.HOLDING: PORTABLE_KINDS,
    EventKind.OPENED: (CellKind.DOOR,),
}


class EmbeddingError(ValueError):
    """Embedding input or table problems (bad text, missing key, bad file)."""


@lru_cache(maxsize=1)
def vocab() -> tuple[Event, ...]:
    """The full event vocabulary in its canonical order: event kind major,
    then color, then object kind."""
    events = []
    for ekind in (EventKind.FACING, EventKind.HOLDING, EventKind.OPENED):
        for color in range(N_COLORS):
            for okind in _EVENT_OBJ_KINDS[ekind]:
                events.append(Event(ekind, color, okind))
    return tuple(events)


@lru_cache(maxsize=1)
def vocab_index() -> dict[Event, int]:
    return {event: i for i, event in enumerate(vocab())}


def onehot(event: Event) -> np.ndarray:
    vec = np.zeros(len(vocab()), dtype=np.float64)
    try:
        vec[vocab_index()[event]] = 1.0
    except KeyError as exc:
        raise EmbeddingError(f"event outside vocabulary: {event}") from exc
    return vec


_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_TOKEN_SPLIT = re.compile(r"[^a-z0-9]+")


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a; tiny, stable, and easy to verify by hand."""
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def embed_text(text: str, dim: int) -> np.ndarray:
    """Hashed bag-of-words: lowercase, split on non-alphanumerics, hash each
    token into one of dim buckets, then L2-normalize the counts."""
    if dim < 16:
        raise EmbeddingError(f"hashed bag-of-words dim must be >= 16, got {dim}")
    tokens = [t for t in _TOKEN_SPLIT.split(text.lower()) if t]
    if not tokens:
        raise EmbeddingError(f"no tokens in text {text!r}")
    vec = np.zeros(dim, dtype=np.float64)
    for token in tokens:
        vec[fnv1a64(token.encode("utf-8")) % dim] += 1.0
    return vec / np.linalg.norm(vec)


def distance(a: np.ndarray, b: np.ndarray) -> float:
    """Euclidean distance between two embeddings."""
    return float(np.linalg.norm(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)))


def load_embedding_file(path: str | Path) -> "EmbeddingTable":
    """Parse a TSV of precomputed vectors.

    First line is ``dim<TAB>D``; each following line is
    ``text<TAB>v1,v2,...,vD``. Any deviation is an error, lookups of unknown
    text are errors, there is no fallback.
    """
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise EmbeddingError(f"cannot read embedding file {path}: {exc}") from exc
    if not lines:
        raise EmbeddingError(f"{path}: empty embedding file")
    header = lines[0].split("\t")
    if len(header) != 2 or header[0] != "dim":
        raise EmbeddingError(f"{path}:1: expected 'dim<TAB>D' header, got {lines[0]!r}")
    try:
        dim = int(header[1])
    except ValueError as exc:
        raise EmbeddingError(f"{path}:1: bad dimension {header[1]!r}") from exc
    if dim < 1:
        raise EmbeddingError(f"{path}:1: dimension must be positive")
    table: dict[str, np.ndarray] = {}
    for line_no, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise EmbeddingError(f"{path}:{line_no}: expected 'text<TAB>values'")
        text, values = parts
        try:
            vec = np.array([float(v) for v in values.split(",")], dtype=np.float64)
        except ValueError as exc:
            raise EmbeddingError(f"{path}:{line_no}: unparsable vector") from exc
        if vec.shape != (dim,):
            raise EmbeddingError(
                f"{path}:{line_no}: vector length {vec.shape[0]} != declared dim {dim}"
            )
        if text in table:
            raise EmbeddingError(f"{path}:{line_no}: duplicate text {text!r}")
        table[text] = vec
    return EmbeddingTable(dim=dim, vectors=table, source=str(path))


@dataclass(frozen=True)
class EmbeddingTable:
    dim: int
    vectors: dict[str, np.ndarray]
    source: str

    def lookup(self, text: str) -> np.ndarray:
        try:
            return self.vectors[text]
        except KeyError as exc:
            raise EmbeddingError(f"text not in embedding table {self.source}: {text!r}") from exc


@dataclass(frozen=True)
class EmbedderSpec:
    kind: str
    dim: int = 64
    path: str | None = None

    def validate(self) -> None:
        if self.kind not in EMBEDDER_KINDS:
            raise EmbeddingError(f"unknown embedder kind {self.kind!r}")
        if self.kind == "file_lookup" and not self.path:
            raise EmbeddingError("file_lookup embedder needs a file path")


class OneHotEmbedder:
    """Goal vector is the event's basis vector; instruction text is ignored."""

    kind = "onehot_event"

    def __init__(self) -> None:
        self.dim = len(vocab())

    def encode(self, text: str, event: Event) -> np.ndarray:
        del text
        return onehot(event)


class HashedBowEmbedder:
    kind = "hashed_bow"

    def __init__(self, dim: int = 64) -> None:
        if dim < 16:
            raise EmbeddingError(f"hashed bag-of-words dim must be >= 16, got {dim}")
        self.dim = dim

    def encode(self, text: str, event: Event) -> np.ndarray:
        del event
        return embed_text(text, self.dim)


class FileLookupEmbedder:
    kind = "file_lookup"

    def __init__(self, table: EmbeddingTable) -> None:
        self.table = table
        self.dim = table.dim

    def encode(self, text: str, event: Event) -> np.ndarray:
        del event
        return self.table.lookup(text)


def make_embedder(spec: EmbedderSpec):
    spec.validate()
    if spec.kind == "onehot_event":
        return OneHotEmbedder()
    if spec.kind == "hashed_bow":
        return HashedBowEmbedder(spec.dim)
    return FileLookupEmbedder(load_embedding_file(spec.path))
