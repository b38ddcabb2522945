"""Reasoning-chain completion, final answer generation, and the KeyExtract step."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, replace
from typing import Sequence, Union

from .core import Document, ReasoningChain
from .errors import (
    AnswerDelimiterMissing,
    ChainInvariantViolation,
    IncompleteChain,
    IterationLimitExceeded,
    ParseError,
    ValidationError,
)
from .gateway import ChatGateway
from .prompts import (
    canonicalize,
    fill_template,
    find_bracket_span,
    format_chain,
    load_template,
    parse_triples,
    render_documents,
    render_sub_questions,
)

logger = logging.getLogger(__name__)

ANSWER_DELIMITER = "<<ANS>>"
_ANSWER_RE = re.compile(re.escape(ANSWER_DELIMITER) + r"(.*?)" + re.escape(ANSWER_DELIMITER), re.DOTALL)
_RECONSTRUCTED_RE = re.compile(r"Reconstructed\s+Reasoning\s+Chain\s*\**\s*:", re.IGNORECASE)
_KEY_EXTRACT_RE = re.compile(
    r"\(\s*\[?\s*(\d+)\s*\]?\s*,\s*\"(.*)\"\s*\)\s*\.?\s*So the answer is\s*:\s*(.*)$",
    re.DOTALL | re.IGNORECASE,
)


@dataclass(frozen=True)
class CompletionContext:
    documents: tuple[Document, ...]
    question: str
    sub_questions: tuple[str, ...]
    chain: ReasoningChain

    def __post_init__(self):
        object.__setattr__(self, "documents", tuple(self.documents))
        object.__setattr__(self, "sub_questions", tuple(self.sub_questions))
        if not self.documents:
            raise ValidationError("completion needs at least one document")

    def prompt_values(self) -> dict[str, str]:
        return {
            "context": render_documents(self.documents),
            "question": self.question,
            "sub_questions": render_sub_questions(self.sub_questions),
            "chain": format_chain(self.chain),
        }


def _parse_completed(text: str) -> ReasoningChain:
    norm = canonicalize(text)
    start = 0
    for m in _RECONSTRUCTED_RE.finditer(norm):
        start = m.end()
    span = find_bracket_span(norm, start)
    if span is None:
        raise ParseError("no reconstructed triple list in response")
    rows = parse_triples(norm[span[0] : span[1]])
    try:
        return ReasoningChain.from_lists(rows, completed=True)
    except ChainInvariantViolation as exc:
        raise IncompleteChain(str(exc)) from None
    except ValidationError as exc:
        raise ParseError(str(exc)) from None


def complete_chain(
    ctx: CompletionContext,
    gateway: ChatGateway,
    template: str | None = None,
    max_attempts: int = 3,
) -> ReasoningChain:
    """Have the LLM replace every mask using the documents.

    The result may hold more triples than the input. Responses that still
    contain masks are retried with the same prompt.
    """
    prompt = fill_template(template or load_template("complete"), **ctx.prompt_values())
    attempts = max(1, max_attempts)
    for attempt in range(1, attempts + 1):
        try:
            return _parse_completed(gateway.complete(prompt))
        except (ParseError, IncompleteChain) as exc:
            logger.warning("completion attempt %d/%d rejected: %s", attempt, attempts, exc)
            if attempt == attempts:
                raise
    raise AssertionError("unreachable")


def extract_answer(text: str) -> str:
    """Text between the last pair of ``<<ANS>>`` delimiters, stripped."""
    matches = _ANSWER_RE.findall(canonicalize(text))
    if not matches:
        raise AnswerDelimiterMissing("response has no <<ANS>>...<<ANS>> span")
    answer = matches[-1].strip()
    if not answer:
        logger.warning("model returned an empty answer")
    return answer


def _require_completed(chain: ReasoningChain) -> None:
    if chain.mask_count():
        raise IncompleteChain("answer generation needs a chain without masks")


def generate_answer(ctx: CompletionContext, gateway: ChatGateway, template: str | None = None) -> str:
    """Final reasoning call; ``ctx.chain`` must already be completed."""
    _require_completed(ctx.chain)
    prompt = fill_template(template or load_template("answer"), **ctx.prompt_values())
    return extract_answer(gateway.complete(prompt))


def unified_reasoning(
    ctx: CompletionContext, gateway: ChatGateway, template: str | None = None
) -> tuple[ReasoningChain, str]:
    """Complete the chain and answer in a single call."""
    prompt = fill_template(template or load_template("unified"), **ctx.prompt_values())
    text = gateway.complete(prompt)
    answer = extract_answer(text)
    head = canonicalize(text).split(ANSWER_DELIMITER, 1)[0]
    return _parse_completed(head), answer


# KeyExtract


@dataclass(frozen=True)
class KeyExtractState:
    augmented_query: str
    iteration: int = 0
    key_sentences: tuple[str, ...] = ()
    max_iterations: int = 3

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValidationError("max_iterations must be positive")
        if not 0 <= self.iteration <= self.max_iterations:
            raise ValidationError(f"iteration {self.iteration} outside 0..{self.max_iterations}")


@dataclass(frozen=True)
class Answer:
    text: str
    doc_index: int
    key_sentence: str


@dataclass(frozen=True)
class Continue:
    state: KeyExtractState
    doc_index: int
    key_sentence: str


KeyExtractOutcome = Union[Answer, Continue]


def render_key_extract_documents(documents: Sequence[Document]) -> str:
    return "\n".join(f"Document [{i}]: (Title: {d.title}) {d.text}" for i, d in enumerate(documents, 1))


def parse_key_extract(text: str, num_documents: int | None = None) -> tuple[int, str, str]:
    """Split ``([i], "sentence"). So the answer is: X`` into its three parts."""
    m = _KEY_EXTRACT_RE.search(canonicalize(text).strip())
    if m is None:
        raise ParseError(f"not a key-extraction tuple: {text[:80]!r}")
    index, sentence, answer = int(m.group(1)), m.group(2).strip(), m.group(3).strip()
    if num_documents is not None and not 1 <= index <= num_documents:
        raise ParseError(f"document index {index} outside 1..{num_documents}")
    if not sentence:
        raise ParseError("empty key sentence")
    answer = answer.strip().strip('"').rstrip(".").strip()
    if not answer:
        raise ParseError("missing final answer")
    return index, sentence, answer


def key_extract_step(
    state: KeyExtractState,
    documents: Sequence[Document],
    gateway: ChatGateway,
    template: str | None = None,
) -> KeyExtractOutcome:
    if state.iteration >= state.max_iterations:
        raise IterationLimitExceeded(f"KeyExtract already ran {state.iteration} iterations")
    prompt = fill_template(
        template or load_template("key_extract"),
        question=state.augmented_query,
        context=render_key_extract_documents(documents),
    )
    index, sentence, answer = parse_key_extract(gateway.complete(prompt), len(documents))
    if answer.lower() != "false":
        return Answer(answer, index, sentence)
    new_state = replace(
        state,
        augmented_query=f"{state.augmented_query} {sentence}",
        iteration=state.iteration + 1,
        key_sentences=state.key_sentences + (sentence,),
    )
    return Continue(new_state, index, sentence)
