"""Per-layer, per-token hidden states for documents and queries.

Hidden states are kept raw (not L2-normalized); similarity code normalizes on
the fly. Layers are addressed 1..L where L is the final encoder layer; the
embedding layer is never stored.

Binary store layout (little endian)::

    b"CRLE" | u32 version | u64 doc count
    per doc: u32 id length | id (UTF-8) | u16 layers | u32 tokens | u32 dim
             | layers*tokens*dim float32, [layer][token][dim] row-major
"""

from __future__ import annotations

import hashlib
import io
import logging
import os
import re
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Iterator, Protocol

import httpx
import numpy as np

from .errors import (
    DimMismatch,
    EmptyText,
    FormatError,
    LayerOutOfRange,
    ProviderUnavailable,
    TruncatedFile,
    ValidationError,
)

logger = logging.getLogger(__name__)

MAX_SEQ_LEN = 512
STORE_MAGIC = b"CRLE"
STORE_VERSION = 1


class LayeredEmbeddings:
    """Hidden states of one text, shaped ``(layers, tokens, dim)``.

    Token 0 is the CLS token in every layer.
    """

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.ascontiguousarray(data, dtype="<f4")
        if arr.ndim != 3:
            raise ValidationError(f"expected a (layers, tokens, dim) array, got shape {arr.shape}")
        n_layers, n_tokens, dim = arr.shape
        if n_layers < 1 or n_tokens < 1 or dim < 1:
            raise ValidationError(f"degenerate embedding shape {arr.shape}")
        if n_layers > 0xFFFF:
            raise ValidationError(f"too many layers: {n_layers}")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("embeddings contain non-finite values")
        arr.setflags(write=False)
        self.data = arr

    @property
    def num_layers(self) -> int:
        return self.data.shape[0]

    @property
    def num_tokens(self) -> int:
        return self.data.shape[1]

    @property
    def dim(self) -> int:
        return self.data.shape[2]

    def _check_layer(self, layer: int) -> None:
        if not 1 <= layer <= self.num_layers:
            raise LayerOutOfRange(f"layer {layer} outside 1..{self.num_layers}")

    def layer(self, layer: int) -> np.ndarray:
        """All token states of ``layer`` (1-based), shape ``(tokens, dim)``."""
        self._check_layer(layer)
        return self.data[layer - 1]

    def final(self) -> np.ndarray:
        return self.data[-1]

    def truncated(self, max_tokens: int) -> "LayeredEmbeddings":
        if self.num_tokens <= max_tokens:
            return self
        return LayeredEmbeddings(self.data[:, :max_tokens, :])

    def __eq__(self, other) -> bool:
        if not isinstance(other, LayeredEmbeddings):
            return NotImplemented
        return self.data.shape == other.data.shape and self.data.tobytes() == other.data.tobytes()

    def __repr__(self) -> str:
        return f"LayeredEmbeddings(layers={self.num_layers}, tokens={self.num_tokens}, dim={self.dim})"


def cls_vector(e: LayeredEmbeddings, layer: int) -> np.ndarray:
    """CLS hidden state at ``layer`` (1-based)."""
    return e.layer(layer)[0]


class EmbeddingStore:
    """Ordered mapping doc_id -> LayeredEmbeddings with a shared (layers, dim)."""

    def __init__(self, entries: Iterable[tuple[str, LayeredEmbeddings]] = ()):
        self._entries: dict[str, LayeredEmbeddings] = {}
        for doc_id, emb in entries:
            self.add(doc_id, emb)

    def add(self, doc_id: str, emb: LayeredEmbeddings) -> None:
        if not doc_id:
            raise ValidationError("doc id must be non-empty")
        if doc_id in self._entries:
            raise ValidationError(f"duplicate doc id {doc_id!r}")
        if self._entries:
            if emb.num_layers != self.num_layers or emb.dim != self.dim:
                raise DimMismatch(
                    f"{doc_id!r} has (layers={emb.num_layers}, dim={emb.dim}), "
                    f"store expects (layers={self.num_layers}, dim={self.dim})"
                )
        self._entries[doc_id] = emb

    def _first(self) -> LayeredEmbeddings:
        return next(iter(self._entries.values()))

    @property
    def num_layers(self) -> int | None:
        return self._first().num_layers if self._entries else None

    @property
    def dim(self) -> int | None:
        return self._first().dim if self._entries else None

    def __getitem__(self, doc_id: str) -> LayeredEmbeddings:
        return self._entries[doc_id]

    def __contains__(self, doc_id) -> bool:
        return doc_id in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def items(self):
        return self._entries.items()

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingStore):
            return NotImplemented
        return list(self._entries) == list(other._entries) and all(
            self._entries[k] == other._entries[k] for k in self._entries
        )


def store_to_bytes(store: EmbeddingStore) -> bytes:
    buf = io.BytesIO()
    buf.write(STORE_MAGIC)
    buf.write(struct.pack("<IQ", STORE_VERSION, len(store)))
    for doc_id, emb in store.items():
        raw_id = doc_id.encode("utf-8")
        buf.write(struct.pack("<I", len(raw_id)))
        buf.write(raw_id)
        buf.write(struct.pack("<HII", emb.num_layers, emb.num_tokens, emb.dim))
        buf.write(emb.data.astype("<f4", copy=False).tobytes(order="C"))
    return buf.getvalue()


def store_from_bytes(blob: bytes) -> EmbeddingStore:
    view = memoryview(blob)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise TruncatedFile(f"needed {n} bytes at offset {pos}, file has {len(view)}")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != STORE_MAGIC:
        raise FormatError("bad magic, not an embedding store")
    version, count = struct.unpack("<IQ", take(12))
    if version != STORE_VERSION:
        raise FormatError(f"unsupported store version {version}")
    store = EmbeddingStore()
    for _ in range(count):
        (id_len,) = struct.unpack("<I", take(4))
        try:
            doc_id = bytes(take(id_len)).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"doc id is not valid UTF-8: {exc}") from None
        n_layers, n_tokens, dim = struct.unpack("<HII", take(10))
        n_floats = n_layers * n_tokens * dim
        arr = np.frombuffer(take(4 * n_floats), dtype="<f4").reshape(n_layers, n_tokens, dim)
        try:
            store.add(doc_id, LayeredEmbeddings(arr))
        except (ValidationError, DimMismatch) as exc:
            raise FormatError(f"invalid entry {doc_id!r}: {exc}") from None
    if pos != len(view):
        raise FormatError(f"{len(view) - pos} trailing bytes after last document")
    return store


def save_store(store: EmbeddingStore, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(store_to_bytes(store))
    os.replace(tmp, path)


def load_store(path) -> EmbeddingStore:
    return store_from_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# Encoder providers


class EncoderProvider(Protocol):
    name: str

    def hidden_states(self, text: str, max_tokens: int) -> np.ndarray:
        """Return a ``(layers, tokens, dim)`` array for ``text``."""
        ...


def encode(text: str, provider: EncoderProvider, max_seq_len: int = MAX_SEQ_LEN) -> LayeredEmbeddings:
    if not text or not text.strip():
        raise EmptyText("cannot encode empty text")
    try:
        raw = provider.hidden_states(text, max_seq_len)
    except ProviderUnavailable:
        raise
    except (httpx.HTTPError, OSError) as exc:
        raise ProviderUnavailable(f"{provider.name}: {exc}") from exc
    try:
        emb = LayeredEmbeddings(raw)
    except ValidationError as exc:
        raise ProviderUnavailable(f"{provider.name} returned unusable hidden states: {exc}") from exc
    return emb.truncated(max_seq_len)


def encode_many(
    texts: list[str],
    provider: EncoderProvider,
    max_seq_len: int = MAX_SEQ_LEN,
    max_in_flight: int = 4,
) -> list[LayeredEmbeddings | Exception]:
    """Encode texts concurrently; failures are returned in place, not raised."""

    def one(text):
        try:
            return encode(text, provider, max_seq_len)
        except (ProviderUnavailable, EmptyText) as exc:
            return exc

    if max_in_flight <= 1:
        return [one(t) for t in texts]
    with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
        return list(pool.map(one, texts))


class FixtureEncoder:
    """Looks texts up in a fixed table; unknown texts are an error.

    The table can be persisted with the store format, using the text itself
    as the entry id.
    """

    name = "fixture"

    def __init__(self, table: dict[str, LayeredEmbeddings | np.ndarray] | None = None):
        self._table = {k: v if isinstance(v, LayeredEmbeddings) else LayeredEmbeddings(v) for k, v in (table or {}).items()}

    def add(self, text: str, emb) -> None:
        self._table[text] = emb if isinstance(emb, LayeredEmbeddings) else LayeredEmbeddings(emb)

    def hidden_states(self, text: str, max_tokens: int) -> np.ndarray:
        try:
            return self._table[text].data
        except KeyError:
            digest = hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]
            raise ProviderUnavailable(f"no fixture embedding for text sha256:{digest}") from None

    @classmethod
    def load(cls, path) -> "FixtureEncoder":
        store = load_store(path)
        return cls(dict(store.items()))

    def save(self, path) -> None:
        save_store(EmbeddingStore(self._table.items()), path)


class HttpEncoder:
    """Client for an embedding service that returns every hidden layer.

    Request: ``{"text": ..., "output_hidden_states": true}``;
    response: ``{"hidden_states": [[[float]]]}`` indexed [layer][token][dim].
    Set ``includes_embedding_layer`` when the service prepends the
    token-embedding output (as HF models do); it is dropped.
    """

    name = "http"

    def __init__(
        self,
        url: str,
        timeout: float = 30.0,
        includes_embedding_layer: bool = False,
        client: httpx.Client | None = None,
    ):
        self.url = url
        self.includes_embedding_layer = includes_embedding_layer
        self._client = client or httpx.Client(timeout=timeout)

    def hidden_states(self, text: str, max_tokens: int) -> np.ndarray:
        try:
            resp = self._client.post(self.url, json={"text": text, "output_hidden_states": True})
            resp.raise_for_status()
            states = resp.json()["hidden_states"]
        except (httpx.HTTPError, KeyError, ValueError, TypeError) as exc:
            raise ProviderUnavailable(f"embedding service at {self.url}: {exc}") from exc
        arr = np.asarray(states, dtype=np.float32)
        if arr.ndim != 3:
            raise ProviderUnavailable(f"hidden_states has shape {arr.shape}, expected 3 axes")
        if self.includes_embedding_layer:
            arr = arr[1:]
        return arr[:, :max_tokens, :]


_TOKEN_RE = re.compile(r"<UNCERTAIN>|<FILL>|\w+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    return [t.lower() for t in _TOKEN_RE.findall(text)]


@lru_cache(maxsize=65536)
def _token_vector(token: str, dim: int) -> np.ndarray:
    seed = int.from_bytes(hashlib.sha256(token.encode("utf-8")).digest()[:8], "little")
    vec = np.random.default_rng(seed).standard_normal(dim)
    vec /= np.linalg.norm(vec)
    vec.setflags(write=False)
    return vec


@dataclass
class HashingEncoder:
    """Deterministic stand-in encoder for tests and offline demos.

    Each word maps to a fixed random unit vector. At layer ``l`` a token's
    state blends its own vector with the mean context of the text, with the
    context share growing as ``l / layers``; the CLS state moves the same way
    from a fixed CLS vector towards the context mean. Texts sharing words
    therefore share final-layer CLS direction, while early layers stay close
    to text-independent vectors.
    """

    layers: int = 12
    dim: int = 64
    name: str = "hashing"

    def hidden_states(self, text: str, max_tokens: int) -> np.ndarray:
        words = tokenize(text)[: max(max_tokens - 1, 0)]
        if not words:
            words = ["<empty>"]
        tok = np.stack([_token_vector(w, self.dim) for w in words])
        context = tok.mean(axis=0)
        cls = _token_vector("[CLS]", self.dim)
        out = np.empty((self.layers, len(words) + 1, self.dim))
        for l in range(1, self.layers + 1):
            mix = l / self.layers
            out[l - 1, 0] = (1.0 - mix) * cls + mix * context
            out[l - 1, 1:] = tok + mix * context
        return out.astype(np.float32)
