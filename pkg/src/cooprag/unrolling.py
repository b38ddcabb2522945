"""Question unrolling: prompt, call, and parse into an UnrolledQuestion."""

from __future__ import annotations

import logging
import re

from .core import ReasoningChain, UnrolledQuestion
from .errors import (
    ChainInvariantViolation,
    EmptyQuestion,
    ParseError,
    UnrollChainError,
    ValidationError,
)
from .gateway import ChatGateway
from .prompts import (
    canonicalize,
    fill_template,
    find_bracket_span,
    load_template,
    parse_literal_list,
    parse_triples,
)

logger = logging.getLogger(__name__)

OUTPUT_MARKERS = ("Hop Count:", "Reasoning Structure:", "Sub-questions:", "Triple Reasoning Chain:")
DEFAULT_ATTEMPTS = 3

_SUBQ_LABEL_RE = re.compile(r"^\s*(?:[-*]\s*|\d+[.)]\s*)?(?:\**SUB[_ ]?Q\d+\**\s*:\s*)?", re.IGNORECASE)


def _marker_re(marker: str) -> re.Pattern:
    words = r"[\s_-]*".join(re.escape(w) for w in marker.rstrip(":").split())
    return re.compile(r"\**\s*" + words + r"\s*\**\s*:\s*\**", re.IGNORECASE)


_MARKERS = {m: _marker_re(m) for m in OUTPUT_MARKERS}


def check_template(template: str) -> str:
    missing = [m for m in OUTPUT_MARKERS if m not in template]
    if missing:
        raise ValidationError(f"unrolling template lacks output markers {missing}")
    if "[question]" not in template:
        raise ValidationError("unrolling template lacks a [question] placeholder")
    return template


def render_unroll_prompt(question: str, template: str | None = None) -> str:
    if not question or not question.strip():
        raise EmptyQuestion("question must be non-empty")
    template = check_template(template if template is not None else load_template("unroll"))
    return fill_template(template, question=question)


def _locate(text: str) -> dict[str, tuple[int, int]]:
    found = {}
    for marker, pattern in _MARKERS.items():
        m = None
        for m in pattern.finditer(text):
            pass  # last occurrence: models sometimes echo the format before answering
        if m is not None:
            found[marker] = (m.start(), m.end())
    return found


def _section(text: str, found: dict, marker: str) -> str:
    start = found[marker][1]
    ends = [s for s, _ in found.values() if s > start]
    return text[start : min(ends) if ends else len(text)]


def _clean_sub_question(s: str) -> str:
    return _SUBQ_LABEL_RE.sub("", s, count=1).strip()


def _parse_sub_questions(body: str) -> list[str]:
    span = find_bracket_span(body)
    if span is not None:
        items = parse_literal_list(body[span[0] : span[1]])
        if not isinstance(items, list) or not all(isinstance(x, str) for x in items):
            raise ParseError("sub-questions must be a list of strings")
    else:
        items = [line for line in body.splitlines() if line.strip()]
    subs = [_clean_sub_question(x) for x in items]
    if any(not s for s in subs):
        raise ParseError("empty sub-question")
    return subs


def parse_unroll_output(text: str, question: str) -> UnrolledQuestion:
    """Parse the four-section unrolling answer.

    Hop count, sub-questions and the triple chain are required; the reasoning
    structure is optional and ignored.
    """
    if not text or not text.strip():
        raise ParseError("empty unrolling output")
    norm = canonicalize(text)
    found = _locate(norm)
    for required in ("Hop Count:", "Sub-questions:", "Triple Reasoning Chain:"):
        if required not in found:
            raise ParseError(f"missing section {required!r}")

    hop = re.search(r"\d+", _section(norm, found, "Hop Count:"))
    if hop is None:
        raise ParseError("hop count is not a number")
    hop_count = int(hop.group())
    if hop_count < 1:
        raise ParseError(f"hop count must be positive, got {hop_count}")

    sub_questions = _parse_sub_questions(_section(norm, found, "Sub-questions:"))
    if not sub_questions:
        logger.info("unrolling produced no sub-questions for %r", question[:60])

    chain_body = _section(norm, found, "Triple Reasoning Chain:")
    span = find_bracket_span(chain_body)
    if span is None:
        raise ParseError("no triple list after 'Triple Reasoning Chain:'")
    rows = parse_triples(chain_body[span[0] : span[1]])
    try:
        chain = ReasoningChain.from_lists(rows)
    except ChainInvariantViolation as exc:
        raise UnrollChainError(str(exc)) from None
    except ValidationError as exc:
        raise ParseError(str(exc)) from None

    try:
        return UnrolledQuestion(question, tuple(sub_questions), chain, hop_count, raw_llm_text=text)
    except ValidationError as exc:
        raise ParseError(str(exc)) from None


def unroll(
    question: str,
    gateway: ChatGateway,
    template: str | None = None,
    max_attempts: int = DEFAULT_ATTEMPTS,
) -> UnrolledQuestion:
    """Ask the LLM to unroll ``question``, re-asking with the same prompt on bad output."""
    prompt = render_unroll_prompt(question, template)
    attempts = max(1, max_attempts)
    for attempt in range(1, attempts + 1):
        text = gateway.complete(prompt)
        try:
            return parse_unroll_output(text, question)
        except ParseError as exc:
            logger.warning("unroll attempt %d/%d unparseable: %s", attempt, attempts, exc)
            if attempt == attempts:
                raise
    raise AssertionError("unreachable")
