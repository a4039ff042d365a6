"""Embedding index over the taxonomy and exhaustive Top-k cosine retrieval.

The taxonomy is small (a few thousand tags), so retrieval is a full scan:
every query is scored against every tag document embedding and the k highest
cosine similarities win.  Ties are broken by corpus order (earlier wins) so
runs are reproducible.  No approximate-nearest-neighbor structure.

The index persists as a flat binary file:

    header:     uint32 dim, uint32 count        (little endian)
    per entry:  uint32 id byte length, id bytes (UTF-8),
                dim * float32 values            (little endian)

Vectors are stored as float32, so a persisted index reloads bit-exactly.
The index is immutable after build; ``top_k`` is read-only and safe for
concurrent callers.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np

from .corpus import NumeralRecord, TaxonomyCorpus
from .errors import BackendError

__all__ = [
    "Candidate",
    "VectorIndex",
    "EmbedderBackend",
    "cosine_similarity",
    "build_index",
    "top_k",
    "retrieve",
]


class EmbedderBackend(Protocol):
    """Maps a batch of texts to one embedding vector per text."""

    backend_id: str

    def embed_batch(self, texts: list[str]) -> np.ndarray:
        """Return an array of shape (len(texts), dim), input order preserved."""
        ...


@dataclass(frozen=True)
class Candidate:
    """One retrieved tag with its cosine score and 1-based retrieval rank."""

    tag_id: str
    score: float
    retrieval_rank: int


def _as_vector(v) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"expected a 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("vector contains non-finite values")
    return arr


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between two vectors, in [-1, 1] up to rounding."""
    va, vb = _as_vector(a), _as_vector(b)
    if va.shape[0] != vb.shape[0]:
        raise ValueError(f"dimension mismatch: {va.shape[0]} vs {vb.shape[0]}")
    na = np.linalg.norm(va)
    nb = np.linalg.norm(vb)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity undefined for a zero vector")
    return float(np.dot(va, vb) / (na * nb))


@dataclass(frozen=True)
class VectorIndex:
    """Embeddings of all taxonomy tag documents, in corpus order."""

    tag_ids: tuple[str, ...]
    vectors: np.ndarray  # (count, dim) float32

    def __post_init__(self) -> None:
        if self.vectors.ndim != 2:
            raise ValueError("vectors must be a 2-D array")
        if len(self.tag_ids) != self.vectors.shape[0]:
            raise ValueError("one vector per tag_id required")
        if len(set(self.tag_ids)) != len(self.tag_ids):
            raise ValueError("tag_ids must be unique")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("index vectors contain non-finite values")

    def __len__(self) -> int:
        return len(self.tag_ids)

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def save(self, path: str | Path) -> None:
        path = Path(path)
        with path.open("wb") as fh:
            fh.write(struct.pack("<II", self.dim, len(self)))
            for tag_id, vec in zip(self.tag_ids, self.vectors):
                raw = tag_id.encode("utf-8")
                fh.write(struct.pack("<I", len(raw)))
                fh.write(raw)
                fh.write(vec.astype("<f4", copy=False).tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "VectorIndex":
        path = Path(path)
        data = path.read_bytes()
        if len(data) < 8:
            raise ValueError(f"{path}: truncated index file")
        dim, count = struct.unpack_from("<II", data, 0)
        offset = 8
        ids: list[str] = []
        vecs = np.empty((count, dim), dtype=np.float32)
        for i in range(count):
            if offset + 4 > len(data):
                raise ValueError(f"{path}: truncated index entry {i}")
            (id_len,) = struct.unpack_from("<I", data, offset)
            offset += 4
            end = offset + id_len
            vec_end = end + 4 * dim
            if vec_end > len(data):
                raise ValueError(f"{path}: truncated index entry {i}")
            ids.append(data[offset:end].decode("utf-8"))
            vecs[i] = np.frombuffer(data[end:vec_end], dtype="<f4")
            offset = vec_end
        if offset != len(data):
            raise ValueError(f"{path}: trailing bytes after {count} entries")
        return cls(tag_ids=tuple(ids), vectors=vecs)


def build_index(corpus: TaxonomyCorpus, embedder: EmbedderBackend,
                batch_size: int = 64) -> VectorIndex:
    """Embed every tag document and assemble the index in corpus order."""
    if len(corpus) == 0:
        raise ValueError("corpus is empty")
    ids = [doc.tag_id for doc in corpus.docs]
    texts = [doc.text for doc in corpus.docs]
    batches: list[np.ndarray] = []
    dim: int | None = None
    for start in range(0, len(texts), batch_size):
        chunk = texts[start:start + batch_size]
        try:
            vecs = np.asarray(embedder.embed_batch(chunk))
        except Exception as exc:
            raise BackendError(
                f"embedding failed for batch starting at tag "
                f"{ids[start]!r}: {exc}"
            ) from exc
        if vecs.ndim != 2 or vecs.shape[0] != len(chunk):
            raise BackendError(
                f"embedder returned shape {vecs.shape} for a batch of {len(chunk)}"
            )
        if dim is None:
            dim = int(vecs.shape[1])
        elif int(vecs.shape[1]) != dim:
            raise BackendError(
                f"embedding dimension changed across batches: {dim} then "
                f"{int(vecs.shape[1])} (batch starting at tag {ids[start]!r})"
            )
        batches.append(vecs.astype(np.float32))
    return VectorIndex(tag_ids=tuple(ids), vectors=np.vstack(batches))


def top_k(query, index: VectorIndex, k: int) -> list[Candidate]:
    """The k index entries most cosine-similar to the query.

    Scores are non-increasing; equal scores are ordered by corpus position
    (earlier wins); retrieval_rank runs 1..k without gaps.
    """
    q = _as_vector(query)
    if q.shape[0] != index.dim:
        raise ValueError(f"dimension mismatch: query {q.shape[0]} vs index {index.dim}")
    if not 1 <= k <= len(index):
        raise ValueError(f"k={k} out of range for index of size {len(index)}")
    qn = np.linalg.norm(q)
    if qn == 0.0:
        raise ValueError("cosine similarity undefined for a zero query vector")
    mat = index.vectors.astype(np.float64)
    norms = np.linalg.norm(mat, axis=1)
    if np.any(norms == 0.0):
        zero_id = index.tag_ids[int(np.argmax(norms == 0.0))]
        raise ValueError(f"index entry {zero_id!r} has a zero vector")
    scores = (mat @ q) / (norms * qn)
    # Stable sort keeps corpus order among equal scores.
    order = np.argsort(-scores, kind="stable")[:k]
    return [
        Candidate(tag_id=index.tag_ids[int(pos)], score=float(scores[int(pos)]),
                  retrieval_rank=rank)
        for rank, pos in enumerate(order, start=1)
    ]


def retrieve(
    record: NumeralRecord,
    gen_doc: str,
    index: VectorIndex,
    embedder: EmbedderBackend,
    k: int,
) -> list[Candidate]:
    """Embed one generated tag document and return its Top-k candidates."""
    if not gen_doc:
        raise ValueError(f"record {record.record_id!r}: gen_doc is empty")
    try:
        vecs = np.asarray(embedder.embed_batch([gen_doc]))
    except Exception as exc:
        raise BackendError(
            f"embedding failed for record {record.record_id!r}: {exc}"
        ) from exc
    if vecs.ndim != 2 or vecs.shape[0] != 1:
        raise BackendError(f"embedder returned shape {vecs.shape} for one text")
    return top_k(vecs[0], index, k)
