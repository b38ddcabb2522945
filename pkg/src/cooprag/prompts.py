"""Prompt templates and the bracketed-list grammar the LLM answers in."""

from __future__ import annotations

import ast
import json
import re
from importlib import resources
from pathlib import Path
from typing import Sequence

from .core import FILL_LITERAL, UNCERTAIN_LITERAL, Document, ReasoningChain
from .errors import ParseError

TEMPLATE_NAMES = ("unroll", "complete", "answer", "unified", "key_extract")
_PLACEHOLDER_RE = re.compile(r"\[(context|question|sub_questions|chain)\]")

# Characters LLMs commonly emit in place of ASCII quotes and angle brackets.
_CANONICAL = str.maketrans({"“": '"', "”": '"', "‘": "'", "’": "'", "⟨": "<", "⟩": ">"})


def load_template(name: str, override_dir: str | Path | None = None) -> str:
    if name not in TEMPLATE_NAMES:
        raise KeyError(f"unknown template {name!r}")
    if override_dir is not None:
        candidate = Path(override_dir) / f"{name}.txt"
        if candidate.exists():
            return candidate.read_text(encoding="utf-8")
    return resources.files("cooprag").joinpath("prompts", f"{name}.txt").read_text(encoding="utf-8")


def fill_template(template: str, **values: str) -> str:
    """Substitute ``[context]``-style placeholders in one pass.

    Values are inserted verbatim and never re-scanned, so bracketed text
    inside documents or questions is left alone.
    """

    def sub(m: re.Match) -> str:
        key = m.group(1)
        if key not in values:
            return m.group(0)
        return values[key]

    return _PLACEHOLDER_RE.sub(sub, template)


def render_documents(documents: Sequence[Document]) -> str:
    return "\n".join(f"Document[{i}] (Title: {d.title}) {d.text}" for i, d in enumerate(documents, 1))


def render_sub_questions(sub_questions: Sequence[str]) -> str:
    return json.dumps(list(sub_questions), ensure_ascii=False)


def format_chain(chain: ReasoningChain) -> str:
    return json.dumps(chain.as_lists(), ensure_ascii=False)


def canonicalize(text: str) -> str:
    return text.translate(_CANONICAL)


def find_bracket_span(text: str, start: int = 0) -> tuple[int, int] | None:
    """Locate the first balanced ``[...]`` at or after ``start``.

    Brackets inside quoted strings do not count. Returns ``(begin, end)``
    with ``end`` exclusive, or None when no complete list exists.
    """
    begin = text.find("[", start)
    if begin < 0:
        return None
    depth, quote, escaped = 0, None, False
    for i in range(begin, len(text)):
        ch = text[i]
        if quote:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == quote:
                quote = None
            continue
        if ch == '"':
            quote = ch
        elif ch == "[":
            depth += 1
        elif ch == "]":
            depth -= 1
            if depth == 0:
                return begin, i + 1
    return None


def parse_literal_list(fragment: str):
    try:
        return json.loads(fragment)
    except json.JSONDecodeError:
        pass
    try:
        return ast.literal_eval(fragment)
    except (ValueError, SyntaxError) as exc:
        raise ParseError(f"malformed list: {fragment[:80]!r}") from exc


def _slot_text(raw: str) -> str:
    # A mask literal embedded in a longer phrase marks the whole slot as that mask.
    raw = raw.strip()
    if FILL_LITERAL in raw:
        return FILL_LITERAL
    if UNCERTAIN_LITERAL in raw:
        return UNCERTAIN_LITERAL
    return raw


def parse_triples(fragment: str) -> list[list[str]]:
    rows = parse_literal_list(fragment)
    if not isinstance(rows, list) or not rows:
        raise ParseError("triple chain must be a non-empty list")
    out = []
    for row in rows:
        if not isinstance(row, (list, tuple)) or len(row) != 3:
            raise ParseError(f"triple must be a 3-element list, got {row!r}")
        if not all(isinstance(x, str) and x.strip() for x in row):
            raise ParseError(f"triple elements must be non-empty strings, got {row!r}")
        out.append([_slot_text(x) for x in row])
    return out


def parse_chain_text(text: str, start: int = 0, completed: bool = False) -> ReasoningChain:
    """Parse the first bracketed triple list in ``text`` after ``start``."""
    text = canonicalize(text)
    span = find_bracket_span(text, start)
    if span is None:
        raise ParseError("no bracketed triple list found")
    rows = parse_triples(text[span[0] : span[1]])
    return ReasoningChain.from_lists(rows, completed=completed)
