"""Difficulty-weighted InfoNCE over a batch of unrolled questions.

A batch holds ``b`` questions and ``2b`` documents: document ``i`` is the
positive of question ``i`` and document ``b + i`` its hard negative. Every
question is contrasted against all ``2b`` documents (its own positive stays
in the denominator). Row losses are weighted by a difficulty weight
``ln(1 + n)``, where ``n`` counts sub-questions, or chain triples in
``chain_length`` mode.

Gradients stop at the score matrix. An external trainer chains
:func:`batch_loss_grad` through its own ``d score / d params`` to update an
encoder.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from .core import ReasoningChain, UnrolledQuestion
from .embeddings import LayeredEmbeddings
from .errors import DimMismatch, IndexOutOfRange, NonPositiveTemperature, ValidationError
from .rala import score_optimized

AlphaMode = Literal["sub_questions", "chain_length"]
DEFAULT_TAU = 0.05
DEFAULT_BATCH_SIZE = 40


def alpha(u: UnrolledQuestion, mode: AlphaMode = "sub_questions") -> float:
    if mode == "sub_questions":
        n = len(u.sub_questions)
    elif mode == "chain_length":
        n = len(u.chain)
    else:
        raise ValidationError(f"unknown alpha mode {mode!r}")
    return math.log1p(n)


def _check_tau(tau: float) -> None:
    if not tau > 0:
        raise NonPositiveTemperature(f"temperature must be positive, got {tau}")


def info_nce_row(scores, positive_index: int, tau: float = DEFAULT_TAU) -> float:
    """``-log softmax(scores / tau)[positive_index]``, evaluated stably."""
    _check_tau(tau)
    s = np.asarray(scores, dtype=np.float64).ravel()
    if not 0 <= positive_index < s.size:
        raise IndexOutOfRange(f"positive index {positive_index} outside 0..{s.size - 1}")
    logits = s / tau
    top = int(np.argmax(logits))
    rest = np.delete(logits, top) - logits[top]
    # log-sum-exp relative to the max term; log1p keeps precision when the max dominates
    return float((logits[top] - logits[positive_index]) + math.log1p(float(np.exp(rest).sum())))


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _check_scores(scores, b: int) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    if s.shape != (b, 2 * b):
        raise DimMismatch(f"score matrix must be {b}x{2 * b}, got {s.shape}")
    if not np.all(np.isfinite(s)):
        raise ValidationError("score matrix has non-finite entries")
    return s


def weighted_info_nce(scores, alphas: Sequence[float], tau: float = DEFAULT_TAU) -> float:
    """Sum over rows ``i`` of ``alphas[i] * info_nce_row(scores[i], i, tau)``."""
    alphas = np.asarray(alphas, dtype=np.float64)
    s = _check_scores(scores, alphas.size)
    return float(sum(a * info_nce_row(row, i, tau) for i, (a, row) in enumerate(zip(alphas, s))))


def weighted_info_nce_grad(scores, alphas: Sequence[float], tau: float = DEFAULT_TAU) -> np.ndarray:
    """``d loss / d scores[i, j] = alphas[i] / tau * (softmax_j(scores[i] / tau) - [j == i])``."""
    _check_tau(tau)
    alphas = np.asarray(alphas, dtype=np.float64)
    b = alphas.size
    s = _check_scores(scores, b)
    grad = _softmax_rows(s / tau)
    grad[np.arange(b), np.arange(b)] -= 1.0
    return grad * (alphas / tau)[:, None]


@dataclass(frozen=True)
class BatchSpec:
    questions: tuple[UnrolledQuestion, ...]
    documents: tuple[str, ...] = ()
    tau: float = DEFAULT_TAU
    alpha_mode: AlphaMode = "sub_questions"

    def __post_init__(self):
        object.__setattr__(self, "questions", tuple(self.questions))
        b = len(self.questions)
        if b < 1:
            raise ValidationError("batch needs at least one question")
        docs = tuple(self.documents) or tuple(
            [f"pos-{i}" for i in range(b)] + [f"neg-{i}" for i in range(b)]
        )
        if len(docs) != 2 * b:
            raise ValidationError(f"{b} questions need {2 * b} documents, got {len(docs)}")
        object.__setattr__(self, "documents", docs)
        _check_tau(self.tau)
        if self.alpha_mode not in ("sub_questions", "chain_length"):
            raise ValidationError(f"unknown alpha mode {self.alpha_mode!r}")

    @property
    def size(self) -> int:
        return len(self.questions)

    def positive(self, i: int) -> str:
        return self.documents[i]

    def hard_negative(self, i: int) -> str:
        return self.documents[self.size + i]

    def alphas(self) -> np.ndarray:
        return np.array([alpha(u, self.alpha_mode) for u in self.questions])


def batch_loss(batch: BatchSpec, scores) -> float:
    return weighted_info_nce(scores, batch.alphas(), batch.tau)


def batch_loss_grad(batch: BatchSpec, scores) -> np.ndarray:
    return weighted_info_nce_grad(scores, batch.alphas(), batch.tau)


def score_matrix(
    questions: Sequence[LayeredEmbeddings], documents: Sequence[LayeredEmbeddings], layers
) -> np.ndarray:
    """``b x 2b`` matrix of gap-weighted scores."""
    if len(documents) != 2 * len(questions):
        raise DimMismatch(f"{len(questions)} questions need {2 * len(questions)} documents")
    return np.array([[score_optimized(u, d, layers) for d in documents] for u in questions])


def finite_difference_grad(batch: BatchSpec, scores, h: float = 1e-5) -> np.ndarray:
    """Central differences of :func:`batch_loss`, one entry at a time."""
    s = np.array(scores, dtype=np.float64)
    grad = np.zeros_like(s)
    for idx in np.ndindex(*s.shape):
        orig = s[idx]
        s[idx] = orig + h
        up = batch_loss(batch, s)
        s[idx] = orig - h
        down = batch_loss(batch, s)
        s[idx] = orig
        grad[idx] = (up - down) / (2 * h)
    return grad


def relative_error(analytic, numeric) -> float:
    """Infinity-norm relative error ``max|a - n| / max(max|a|, max|n|)``.

    Measured over the whole matrix rather than per entry: entries whose true
    gradient underflows to ~0 would otherwise divide rounding noise by zero.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(float(np.max(np.abs(a))), float(np.max(np.abs(n))))
    diff = float(np.max(np.abs(a - n)))
    if scale == 0.0:
        return diff
    return diff / scale


def check_gradient(batch: BatchSpec, scores, h: float = 1e-5) -> float:
    return relative_error(batch_loss_grad(batch, scores), finite_difference_grad(batch, scores, h))


# JSON batch fixtures: {"tau", "alpha_mode", "questions": [...], "scores": [[...]]}


def question_to_dict(u: UnrolledQuestion) -> dict:
    return {
        "question": u.original,
        "sub_questions": list(u.sub_questions),
        "chain": u.chain.as_lists(),
        "hop_count": u.hop_count,
    }


def question_from_dict(d: dict) -> UnrolledQuestion:
    return UnrolledQuestion(
        d["question"],
        tuple(d.get("sub_questions", ())),
        ReasoningChain.from_lists(d["chain"], completed=d.get("completed", False)),
        d.get("hop_count", 1),
    )


def save_batch_fixture(path, batch: BatchSpec, scores) -> None:
    payload = {
        "tau": batch.tau,
        "alpha_mode": batch.alpha_mode,
        "questions": [question_to_dict(u) for u in batch.questions],
        "documents": list(batch.documents),
        "scores": np.asarray(scores, dtype=np.float64).tolist(),
    }
    Path(path).write_text(json.dumps(payload, indent=2, ensure_ascii=False), encoding="utf-8")


def load_batch_fixture(path) -> tuple[BatchSpec, np.ndarray]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    try:
        batch = BatchSpec(
            tuple(question_from_dict(q) for q in payload["questions"]),
            tuple(payload.get("documents", ())),
            float(payload.get("tau", DEFAULT_TAU)),
            payload.get("alpha_mode", "sub_questions"),
        )
        scores = _check_scores(payload["scores"], batch.size)
    except KeyError as exc:
        raise ValidationError(f"batch fixture missing field {exc}") from None
    return batch, scores
