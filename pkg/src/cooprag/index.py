"""Exact flat cosine search over final-layer CLS vectors."""

from __future__ import annotations

import io
import os
import struct
from pathlib import Path

import numpy as np

from .core import RankedDocument
from .embeddings import EmbeddingStore
from .errors import DimMismatch, EmptyStore, FormatError, TruncatedFile, ZeroVector

INDEX_MAGIC = b"CRFI"
INDEX_VERSION = 1
_MIN_NORM = 1e-12


class FlatIndex:
    """Row-normalized CLS matrix (float64) aligned with a doc id table."""

    def __init__(self, doc_ids: list[str], matrix: np.ndarray):
        matrix = np.ascontiguousarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != len(doc_ids):
            raise DimMismatch(f"matrix shape {matrix.shape} does not match {len(doc_ids)} ids")
        if len(set(doc_ids)) != len(doc_ids):
            raise FormatError("duplicate doc ids in index")
        norms = np.linalg.norm(matrix, axis=1)
        if norms.size and np.max(np.abs(norms - 1.0)) > 1e-6:
            raise FormatError("index rows are not unit-normalized")
        matrix.setflags(write=False)
        self.doc_ids = list(doc_ids)
        self.matrix = matrix
        # lexicographic rank of each doc id, the secondary sort key
        self._id_order = np.empty(len(doc_ids), dtype=np.int64)
        self._id_order[np.argsort(np.array(doc_ids, dtype=object), kind="stable")] = np.arange(len(doc_ids))

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self) -> int:
        return len(self.doc_ids)

    def search(self, q, n: int) -> list[RankedDocument]:
        """Top-``n`` documents by cosine similarity to ``q``; ties go to the smaller doc id."""
        if n < 1:
            raise ValueError(f"n must be positive, got {n}")
        q = np.asarray(q, dtype=np.float64).ravel()
        if q.shape[0] != self.dim:
            raise DimMismatch(f"query has dim {q.shape[0]}, index has dim {self.dim}")
        norm = np.linalg.norm(q)
        if norm < _MIN_NORM:
            raise ZeroVector("query vector has zero norm")
        scores = self.matrix @ (q / norm)
        order = np.lexsort((self._id_order, -scores))[:n]
        return [RankedDocument(self.doc_ids[i], float(scores[i]), r + 1) for r, i in enumerate(order)]

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(INDEX_MAGIC)
        buf.write(struct.pack("<IQI", INDEX_VERSION, len(self.doc_ids), self.dim))
        for doc_id in self.doc_ids:
            raw = doc_id.encode("utf-8")
            buf.write(struct.pack("<I", len(raw)))
            buf.write(raw)
        buf.write(self.matrix.astype("<f8", copy=False).tobytes(order="C"))
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "FlatIndex":
        view = memoryview(blob)
        pos = 0

        def take(n):
            nonlocal pos
            if pos + n > len(view):
                raise TruncatedFile(f"needed {n} bytes at offset {pos}, file has {len(view)}")
            out = view[pos : pos + n]
            pos += n
            return out

        if bytes(take(4)) != INDEX_MAGIC:
            raise FormatError("bad magic, not a flat index")
        version, count, dim = struct.unpack("<IQI", take(16))
        if version != INDEX_VERSION:
            raise FormatError(f"unsupported index version {version}")
        ids = []
        for _ in range(count):
            (n,) = struct.unpack("<I", take(4))
            ids.append(bytes(take(n)).decode("utf-8"))
        matrix = np.frombuffer(take(8 * count * dim), dtype="<f8").reshape(count, dim)
        if pos != len(view):
            raise FormatError(f"{len(view) - pos} trailing bytes in index file")
        return cls(ids, matrix)

    def save(self, path) -> None:
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(self.to_bytes())
        os.replace(tmp, path)

    @classmethod
    def load(cls, path) -> "FlatIndex":
        return cls.from_bytes(Path(path).read_bytes())


def build_index(store: EmbeddingStore) -> FlatIndex:
    """One normalized final-layer CLS row per document, in store order."""
    if len(store) == 0:
        raise EmptyStore("cannot build an index from an empty store")
    ids, rows = [], []
    for doc_id, emb in store.items():
        v = emb.final()[0].astype(np.float64)
        norm = np.linalg.norm(v)
        if norm < _MIN_NORM:
            raise ZeroVector(f"CLS vector of {doc_id!r} has zero norm")
        ids.append(doc_id)
        rows.append(v / norm)
    return FlatIndex(ids, np.stack(rows))


def search(index: FlatIndex, q, n: int) -> list[RankedDocument]:
    return index.search(q, n)

