"""Reranking by contrasting encoder layers.

Every scorer compares final-layer query token states against document token
states. The layer-contrast scorers look at how much a document token's
similarity to the query grows between a premature layer and the final one:

* ``naive-gap``: average over query tokens of the best per-document-token
  gap, where a token's gap is the largest final-minus-premature cosine
  difference over the candidate layers.
* ``gap-weighted``: final-layer MaxSim scaled by the gap of the two CLS
  tokens alone. Much cheaper than ``naive-gap``.
* ``token-contrast``: MaxSim against, for each document token, the premature
  layer whose state lies furthest (L2) from its final state.
* ``plain-maxsim``: final-layer MaxSim, no contrast.

Query token 0 (CLS) takes part in the average like every other token.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from .core import RankedDocument, rank_documents
from .embeddings import EmbeddingStore, LayeredEmbeddings
from .errors import BadBucketCount, DimMismatch, UnknownDocId, ValidationError


class Strategy(str, enum.Enum):
    NAIVE_GAP = "naive-gap"
    GAP_WEIGHTED = "gap-weighted"
    TOKEN_CONTRAST = "token-contrast"
    PLAIN_MAXSIM = "plain-maxsim"


@dataclass(frozen=True)
class CandidateLayerSet:
    layers: tuple[int, ...]
    bucket_count: int
    seed: int | None = None

    def __iter__(self):
        return iter(self.layers)

    def __len__(self):
        return len(self.layers)


def bucket_partition(num_layers: int, bucket_count: int) -> list[list[int]]:
    """Split premature layers ``1..num_layers-1`` into contiguous, near-equal buckets.

    Earlier buckets absorb the remainder.
    """
    premature = num_layers - 1
    if not 1 <= bucket_count <= premature:
        raise BadBucketCount(f"bucket count {bucket_count} not in 1..{premature}")
    base, extra = divmod(premature, bucket_count)
    buckets, start = [], 1
    for b in range(bucket_count):
        size = base + (1 if b < extra else 0)
        buckets.append(list(range(start, start + size)))
        start += size
    return buckets


@lru_cache(maxsize=256)
def select_candidate_layers(num_layers: int, bucket_count: int, seed: int | None = 0) -> CandidateLayerSet:
    """Draw one layer uniformly from each bucket; fixed seed gives a fixed set."""
    if num_layers < 3:
        raise BadBucketCount(f"need at least 3 layers to sample candidates, got {num_layers}")
    buckets = bucket_partition(num_layers, bucket_count)
    rng = np.random.default_rng(seed)
    chosen = tuple(int(bucket[rng.integers(len(bucket))]) for bucket in buckets)
    return CandidateLayerSet(chosen, bucket_count, seed)


def _check_layers(layers: Iterable[int], num_layers: int) -> tuple[int, ...]:
    layers = tuple(int(l) for l in layers)
    if not layers:
        raise ValidationError("candidate layer set is empty")
    if len(set(layers)) != len(layers):
        raise ValidationError(f"candidate layers are not distinct: {layers}")
    bad = [l for l in layers if not 1 <= l < num_layers]
    if bad:
        raise ValidationError(f"candidate layers {bad} outside 1..{num_layers - 1}")
    return layers


def _unit(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    return np.divide(x, norm, out=np.zeros_like(x), where=norm > 0)


def _check_pair(u: LayeredEmbeddings, d: LayeredEmbeddings) -> None:
    if u.dim != d.dim:
        raise DimMismatch(f"query dim {u.dim} != document dim {d.dim}")


def token_gap(q_i, d_j_layers, layers: Iterable[int]) -> float:
    """Largest final-minus-premature cosine gap of one query/document token pair.

    ``d_j_layers`` holds the document token's state at every layer, shape
    ``(num_layers, dim)``.
    """
    q = _unit(np.asarray(q_i).ravel())
    d = _unit(np.asarray(d_j_layers))
    if d.ndim != 2 or d.shape[1] != q.shape[0]:
        raise DimMismatch(f"query dim {q.shape[0]} vs document layers shape {d.shape}")
    layers = _check_layers(layers, d.shape[0])
    sims = d @ q
    return float(max(sims[-1] - sims[l - 1] for l in layers))


def _gap_matrix(u: LayeredEmbeddings, d: LayeredEmbeddings, layers) -> np.ndarray:
    """``(query tokens, doc tokens)`` matrix of per-pair gaps."""
    layers = _check_layers(layers, d.num_layers)
    q = _unit(u.final())
    final_sim = q @ _unit(d.final()).T
    gaps = np.full(final_sim.shape, -np.inf)
    for l in layers:
        np.maximum(gaps, final_sim - q @ _unit(d.layer(l)).T, out=gaps)
    return gaps


def score_naive(u: LayeredEmbeddings, d: LayeredEmbeddings, layers) -> float:
    _check_pair(u, d)
    return float(_gap_matrix(u, d, layers).max(axis=1).mean())


def gap_weight(u: LayeredEmbeddings, d: LayeredEmbeddings, layers) -> float:
    """CLS-to-CLS gap; negative when a premature layer is the closer one. Not clamped."""
    _check_pair(u, d)
    return token_gap(u.final()[0], d.data[:, 0, :], layers)


def plain_maxsim(u: LayeredEmbeddings, d: LayeredEmbeddings, layer: int | None = None) -> float:
    """Mean over query tokens of the best cosine against document tokens at ``layer``."""
    _check_pair(u, d)
    doc = d.final() if layer is None else d.layer(layer)
    sims = _unit(u.final()) @ _unit(doc).T
    return float(sims.max(axis=1).mean())


def score_optimized(u: LayeredEmbeddings, d: LayeredEmbeddings, layers) -> float:
    return gap_weight(u, d, layers) * plain_maxsim(u, d)


def contrast_layers(d: LayeredEmbeddings) -> np.ndarray:
    """Per document token, the premature layer (1-based) furthest from the final state.

    Ties go to the lowest layer.
    """
    if d.num_layers < 2:
        raise ValidationError("token contrast needs at least two layers")
    data = d.data.astype(np.float64)
    dist = np.linalg.norm(data[-1][None, :, :] - data[:-1], axis=-1)  # (L-1, T)
    return dist.argmax(axis=0) + 1


def score_token_contrast(u: LayeredEmbeddings, d: LayeredEmbeddings) -> float:
    _check_pair(u, d)
    picked = contrast_layers(d)
    states = d.data[picked - 1, np.arange(d.num_tokens)]
    sims = _unit(u.final()) @ _unit(states).T
    return float(sims.max(axis=1).mean())


def score(strategy: Strategy | str, u: LayeredEmbeddings, d: LayeredEmbeddings, layers=None) -> float:
    strategy = Strategy(strategy)
    if strategy is Strategy.NAIVE_GAP:
        return score_naive(u, d, layers)
    if strategy is Strategy.GAP_WEIGHTED:
        return score_optimized(u, d, layers)
    if strategy is Strategy.TOKEN_CONTRAST:
        return score_token_contrast(u, d)
    return plain_maxsim(u, d)


@dataclass(frozen=True)
class RerankConfig:
    strategy: Strategy = Strategy.GAP_WEIGHTED
    bucket_count: int = 4
    seed: int = 0
    k: int = 5
    allow_any_bucket_count: bool = False

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        if self.k < 1:
            raise ValidationError(f"k must be positive, got {self.k}")
        if not self.allow_any_bucket_count and not 2 <= self.bucket_count <= 4:
            raise BadBucketCount(
                f"bucket count {self.bucket_count} outside 2..4; set allow_any_bucket_count to override"
            )


def rerank(
    candidates: Sequence[str],
    u: LayeredEmbeddings,
    store: EmbeddingStore,
    config: RerankConfig,
    layers: CandidateLayerSet | None = None,
) -> list[RankedDocument]:
    """Score ``candidates`` against the unrolled question and keep the top ``config.k``."""
    unique = list(dict.fromkeys(candidates))
    missing = [c for c in unique if c not in store]
    if missing:
        raise UnknownDocId(f"candidates not in store: {missing}")
    if not unique:
        return []
    if layers is None and config.strategy in (Strategy.NAIVE_GAP, Strategy.GAP_WEIGHTED):
        layers = select_candidate_layers(store.num_layers, config.bucket_count, config.seed)
    scored = [(doc_id, score(config.strategy, u, store[doc_id], layers)) for doc_id in unique]
    return rank_documents(scored, limit=config.k)
