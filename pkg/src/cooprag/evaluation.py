"""Dataset I/O and retrieval / QA metrics (Recall@k, EM, token F1)."""

from __future__ import annotations

import json
import re
import string
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .core import Document, QaExample
from .errors import EmptyGold, MissingExample, SchemaError, ValidationError

# Full-scale figure reported for this method, copied into reports for context only.
REFERENCE_POINTS = {
    "HotpotQA Recall@2 (fine-tuned encoder, GPT-4o-mini reader)": 88.8,
    "HotpotQA EM (fine-tuned encoder, GPT-4o-mini reader)": 65.6,
}


def recall_at_k(retrieved: Sequence[str], gold: Iterable[str], k: int) -> float:
    """Fraction of gold documents found in the first ``k`` retrieved."""
    gold = set(gold)
    if not gold:
        raise EmptyGold("recall needs at least one gold document")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return len(gold.intersection(retrieved[:k])) / len(gold)


_ARTICLES = re.compile(r"\b(a|an|the)\b")
_PUNCT = set(string.punctuation)


def normalize_answer(s: str) -> str:
    s = s.lower()
    s = "".join(ch for ch in s if ch not in _PUNCT)
    s = _ARTICLES.sub(" ", s)
    return " ".join(s.split())


def _golds(golds) -> list[str]:
    golds = [golds] if isinstance(golds, str) else list(golds)
    if not golds:
        raise EmptyGold("no gold answers")
    return golds


def exact_match(pred: str, golds) -> int:
    p = normalize_answer(pred)
    return int(any(p == normalize_answer(g) for g in _golds(golds)))


def _f1(pred_tokens: list[str], gold_tokens: list[str]) -> float:
    if not pred_tokens or not gold_tokens:
        return float(pred_tokens == gold_tokens)
    common = Counter(pred_tokens) & Counter(gold_tokens)
    overlap = sum(common.values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred_tokens)
    recall = overlap / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


def token_f1(pred: str, golds) -> float:
    p = normalize_answer(pred).split()
    return max(_f1(p, normalize_answer(g).split()) for g in _golds(golds))


# --- JSONL datasets ---------------------------------------------------------


def _read_jsonl(path) -> list[tuple[int, object]]:
    rows = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if line.strip():
                try:
                    rows.append((lineno, json.loads(line)))
                except json.JSONDecodeError as exc:
                    rows.append((lineno, exc))
    return rows


def _string_field(obj: dict, key: str, problems: list, lineno: int, allow_empty=False):
    value = obj.get(key)
    if not isinstance(value, str) or (not allow_empty and not value):
        problems.append((lineno, f"field {key!r} missing or not a non-empty string"))
        return None
    return value


def _string_list(obj: dict, key: str, problems: list, lineno: int):
    value = obj.get(key)
    if not isinstance(value, list) or not value or not all(isinstance(x, str) for x in value):
        problems.append((lineno, f"field {key!r} must be a non-empty list of strings"))
        return None
    return value


def load_corpus(path) -> list[Document]:
    docs, problems, seen = [], [], set()
    for lineno, obj in _read_jsonl(path):
        if not isinstance(obj, dict):
            problems.append((lineno, f"not a JSON object ({obj})"))
            continue
        before = len(problems)
        doc_id = _string_field(obj, "id", problems, lineno)
        title = _string_field(obj, "title", problems, lineno, allow_empty=True)
        text = _string_field(obj, "text", problems, lineno)
        if len(problems) > before:
            continue
        if doc_id in seen:
            problems.append((lineno, f"duplicate id {doc_id!r}"))
            continue
        seen.add(doc_id)
        docs.append(Document(doc_id, title, text))
    if problems:
        raise SchemaError(path, problems)
    return docs


def load_qa(path) -> list[QaExample]:
    examples, problems = [], []
    for lineno, obj in _read_jsonl(path):
        if not isinstance(obj, dict):
            problems.append((lineno, f"not a JSON object ({obj})"))
            continue
        before = len(problems)
        ex_id = _string_field(obj, "id", problems, lineno)
        question = _string_field(obj, "question", problems, lineno)
        answers = _string_list(obj, "answers", problems, lineno)
        gold = _string_list(obj, "gold_doc_ids", problems, lineno)
        if len(problems) == before:
            examples.append(QaExample(ex_id, question, tuple(answers), tuple(gold)))
    if problems:
        raise SchemaError(path, problems)
    return examples


def _write_jsonl(path, rows: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")


def save_corpus(path, docs: Iterable[Document]) -> None:
    _write_jsonl(path, ({"id": d.id, "title": d.title, "text": d.text} for d in docs))


def save_qa(path, examples: Iterable[QaExample]) -> None:
    _write_jsonl(
        path,
        (
            {"id": e.id, "question": e.question, "answers": list(e.gold_answers), "gold_doc_ids": list(e.gold_doc_ids)}
            for e in examples
        ),
    )


# --- run records and reports -------------------------------------------------


@dataclass
class RunRecord:
    example_id: str
    question: str
    retrieved: list[str] = field(default_factory=list)
    answer: str | None = None
    stages: list[str] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)
    llm_calls: dict[str, int] = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)
    error: str | None = None

    def __post_init__(self):
        if len(set(self.retrieved)) != len(self.retrieved):
            raise ValidationError(f"duplicate doc ids in retrieved list of {self.example_id!r}")

    @property
    def failed(self) -> bool:
        return self.error is not None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Metrics:
    recall_at_2: float | None
    recall_at_5: float | None
    em: float | None
    f1: float | None
    total: int
    completed: int
    failed: int
    per_example: list[dict] = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "recall@2": self.recall_at_2,
            "recall@5": self.recall_at_5,
            "em": self.em,
            "f1": self.f1,
            "counts": {"total": self.total, "completed": self.completed, "failed": self.failed},
        }


def _mean(xs: list[float]) -> float | None:
    return sum(xs) / len(xs) if xs else None


def evaluate_run(records: Sequence[RunRecord], dataset: Sequence[QaExample] | Mapping[str, QaExample]) -> Metrics:
    """Macro-average metrics over completed records; failures are only counted."""
    by_id = dataset if isinstance(dataset, Mapping) else {e.id: e for e in dataset}
    rows = []
    for rec in records:
        ex = by_id.get(rec.example_id)
        if ex is None:
            raise MissingExample(rec.example_id)
        if rec.failed:
            rows.append({"id": rec.example_id, "status": "failed", "error": rec.error})
            continue
        answer = rec.answer or ""
        rows.append(
            {
                "id": rec.example_id,
                "status": "ok",
                "answer": answer,
                "gold_answers": list(ex.gold_answers),
                "retrieved": list(rec.retrieved),
                "recall@2": recall_at_k(rec.retrieved, ex.gold_doc_ids, 2),
                "recall@5": recall_at_k(rec.retrieved, ex.gold_doc_ids, 5),
                "em": exact_match(answer, ex.gold_answers),
                "f1": token_f1(answer, ex.gold_answers),
            }
        )
    ok = [r for r in rows if r["status"] == "ok"]
    return Metrics(
        recall_at_2=_mean([r["recall@2"] for r in ok]),
        recall_at_5=_mean([r["recall@5"] for r in ok]),
        em=_mean([float(r["em"]) for r in ok]),
        f1=_mean([r["f1"] for r in ok]),
        total=len(rows),
        completed=len(ok),
        failed=len(rows) - len(ok),
        per_example=rows,
    )


def write_report(metrics: Metrics, report_path, per_example_path=None, config: dict | None = None) -> None:
    report = metrics.summary()
    report["reference_points"] = REFERENCE_POINTS
    if config is not None:
        report["config"] = config
    Path(report_path).write_text(json.dumps(report, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
    if per_example_path is not None:
        _write_jsonl(per_example_path, metrics.per_example)
