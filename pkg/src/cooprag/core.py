"""Domain types shared by every stage of the pipeline.

All objects are frozen dataclasses that validate themselves on construction,
so anything that exists is already consistent.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Union

from .errors import ChainInvariantViolation, ValidationError

UNCERTAIN_LITERAL = "<UNCERTAIN>"
FILL_LITERAL = "<FILL>"
MASK_LITERALS = (UNCERTAIN_LITERAL, FILL_LITERAL)


@dataclass(frozen=True)
class Document:
    id: str
    title: str
    text: str

    def __post_init__(self):
        if not self.id:
            raise ValidationError("document id must be non-empty")
        if not self.text:
            raise ValidationError(f"document {self.id!r} has empty text")


class Mask(enum.Enum):
    UNCERTAIN = UNCERTAIN_LITERAL
    FILL = FILL_LITERAL

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class Text:
    value: str

    def __post_init__(self):
        if not self.value or not self.value.strip():
            raise ValidationError("text slot must be non-empty")
        for lit in MASK_LITERALS:
            if lit in self.value:
                raise ValidationError(f"text slot contains mask literal {lit}: {self.value!r}")

    def __str__(self) -> str:
        return self.value


EntitySlot = Union[Text, Mask]


def slot_from_str(raw: str) -> EntitySlot:
    """Map a raw string to a slot; exact mask literals become masks."""
    stripped = raw.strip()
    if stripped == UNCERTAIN_LITERAL:
        return Mask.UNCERTAIN
    if stripped == FILL_LITERAL:
        return Mask.FILL
    return Text(stripped)


@dataclass(frozen=True)
class Triple:
    head: EntitySlot
    relation: EntitySlot
    tail: EntitySlot

    def __post_init__(self):
        if self.relation is Mask.FILL:
            raise ChainInvariantViolation("relation slot cannot be FILL")

    @property
    def slots(self) -> tuple[EntitySlot, EntitySlot, EntitySlot]:
        return (self.head, self.relation, self.tail)

    def render(self) -> str:
        return " ".join(str(s) for s in self.slots)

    def as_list(self) -> list[str]:
        return [str(s) for s in self.slots]

    @classmethod
    def from_strings(cls, head: str, relation: str, tail: str) -> "Triple":
        return cls(slot_from_str(head), slot_from_str(relation), slot_from_str(tail))


@dataclass(frozen=True)
class ReasoningChain:
    """Sequence of triples.

    A masked chain (``completed=False``) carries exactly one FILL, in the tail
    of its last triple. A completed chain carries no masks at all.
    """

    triples: tuple[Triple, ...]
    completed: bool = False

    def __post_init__(self):
        object.__setattr__(self, "triples", tuple(self.triples))
        if not self.triples:
            raise ChainInvariantViolation("reasoning chain must contain at least one triple")
        if self.completed:
            if self.mask_count():
                raise ChainInvariantViolation("completed chain still contains mask slots")
            return
        fills = [
            (i, pos)
            for i, t in enumerate(self.triples)
            for pos, s in enumerate(t.slots)
            if s is Mask.FILL
        ]
        if len(fills) != 1:
            raise ChainInvariantViolation(f"expected exactly one FILL slot, found {len(fills)}")
        if fills[0] != (len(self.triples) - 1, 2):
            raise ChainInvariantViolation("FILL must be the tail of the last triple")

    def __len__(self) -> int:
        return len(self.triples)

    def mask_count(self, kind: Mask | None = None) -> int:
        return sum(
            1
            for t in self.triples
            for s in t.slots
            if isinstance(s, Mask) and (kind is None or s is kind)
        )

    def render(self) -> str:
        return " ".join(t.render() for t in self.triples)

    def as_lists(self) -> list[list[str]]:
        return [t.as_list() for t in self.triples]

    @classmethod
    def from_lists(cls, rows: Iterable[Iterable[str]], completed: bool = False) -> "ReasoningChain":
        triples = []
        for row in rows:
            row = list(row)
            if len(row) != 3:
                raise ValidationError(f"triple must have 3 elements, got {len(row)}: {row!r}")
            triples.append(Triple.from_strings(*row))
        return cls(tuple(triples), completed=completed)


@dataclass(frozen=True)
class UnrolledQuestion:
    original: str
    sub_questions: tuple[str, ...]
    chain: ReasoningChain
    hop_count: int = 1
    raw_llm_text: str = field(default="", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "sub_questions", tuple(self.sub_questions))
        if not self.original.strip():
            raise ValidationError("original question must be non-empty")
        if any(not s.strip() for s in self.sub_questions):
            raise ValidationError("sub-questions must be non-empty")
        if not self.sub_questions and len(self.chain) == 0:
            raise ValidationError("need sub-questions or a non-empty chain")
        if isinstance(self.hop_count, bool) or int(self.hop_count) != self.hop_count or self.hop_count < 1:
            raise ValidationError(f"hop_count must be a positive integer, got {self.hop_count!r}")


def serialize_unrolled(u: UnrolledQuestion) -> str:
    """Flatten question, sub-questions and chain into one retrieval query.

    Segments are stripped and joined by single spaces; masks stay visible as
    their literal tokens.
    """
    parts = [u.original.strip()]
    parts.extend(s.strip() for s in u.sub_questions)
    parts.extend(t.render() for t in u.chain.triples)
    return " ".join(parts)


@dataclass(frozen=True)
class RankedDocument:
    doc_id: str
    score: float
    rank: int


def rank_documents(scored: Iterable[tuple[str, float]], limit: int | None = None) -> list[RankedDocument]:
    """Sort (doc_id, score) pairs by descending score, breaking ties by doc_id."""
    pairs = list(scored)
    for doc_id, score in pairs:
        if not math.isfinite(score):
            raise ValidationError(f"non-finite score for {doc_id!r}: {score}")
    pairs.sort(key=lambda p: (-p[1], p[0]))
    if limit is not None:
        pairs = pairs[:limit]
    return [RankedDocument(doc_id, float(score), i + 1) for i, (doc_id, score) in enumerate(pairs)]


@dataclass(frozen=True)
class QaExample:
    id: str
    question: str
    gold_answers: tuple[str, ...]
    gold_doc_ids: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "gold_answers", tuple(self.gold_answers))
        object.__setattr__(self, "gold_doc_ids", tuple(self.gold_doc_ids))
        if not self.id:
            raise ValidationError("example id must be non-empty")
        if not self.gold_answers:
            raise ValidationError(f"example {self.id!r} has no gold answers")
        if not self.gold_doc_ids:
            raise ValidationError(f"example {self.id!r} has no gold documents")
