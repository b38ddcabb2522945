import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from cooprag.core import QaExample
from cooprag.errors import EmptyGold, MissingExample, SchemaError, ValidationError
from cooprag.evaluation import (
    RunRecord,
    evaluate_run,
    exact_match,
    load_corpus,
    load_qa,
    normalize_answer,
    recall_at_k,
    token_f1,
    write_report,
)


class TestMetrics:
    def test_recall(self):
        assert recall_at_k(["a", "c"], {"a", "b"}, 2) == 0.5
        assert recall_at_k(["c", "a", "b"], {"a", "b"}, 2) == 0.5
        assert recall_at_k([], {"a"}, 5) == 0.0
        with pytest.raises(EmptyGold):
            recall_at_k(["a"], [], 2)

    @given(st.lists(st.sampled_from("abcdefgh"), unique=True), st.sets(st.sampled_from("abcdefgh"), min_size=1))
    def test_recall_monotone_in_k(self, retrieved, gold):
        values = [recall_at_k(retrieved, gold, k) for k in range(1, 10)]
        assert values == sorted(values)
        assert all(0.0 <= v <= 1.0 for v in values)

    @pytest.mark.parametrize(
        "a,b",
        [("The Eiffel Tower", "eiffel tower"), ("Paris!", "paris"), ("  a  cat ", "cat"), ("U.S.A.", "usa")],
    )
    def test_normalization_classes(self, a, b):
        assert normalize_answer(a) == normalize_answer(b)
        assert exact_match(a, [b]) == 1

    def test_em_and_f1(self):
        assert exact_match("Paris", ["London", "paris"]) == 1
        assert exact_match("Paris France", "Paris") == 0
        assert token_f1("yvan chiffre", ["chiffre"]) == pytest.approx(2 / 3)
        assert token_f1("the", ["a"]) == 1.0  # both normalize to empty
        assert token_f1("x", ["y"]) == 0.0


class TestDatasets:
    def test_schema_errors_collect_lines(self, tmp_path):
        p = tmp_path / "c.jsonl"
        p.write_text('{"id": "a", "title": "", "text": "x"}\n{"id": "", "text": "y"}\nnot json\n{"id": "a", "title": "t", "text": "z"}\n')
        with pytest.raises(SchemaError) as err:
            load_corpus(p)
        assert sorted({line for line, _ in err.value.problems}) == [2, 3, 4]

    def test_qa(self, tmp_path):
        p = tmp_path / "qa.jsonl"
        p.write_text(json.dumps({"id": "q", "question": "?", "answers": ["a"], "gold_doc_ids": ["d"]}) + "\n")
        assert load_qa(p)[0].gold_doc_ids == ("d",)
        p.write_text(json.dumps({"id": "q", "question": "?", "answers": [], "gold_doc_ids": ["d"]}) + "\n")
        with pytest.raises(SchemaError):
            load_qa(p)


class TestRunAggregation:
    DATA = [QaExample("1", "?", ("a",), ("d1", "d2")), QaExample("2", "?", ("b",), ("d3",))]

    def test_failures_counted_not_averaged(self, tmp_path):
        records = [
            RunRecord("1", "?", ["d1", "d9"], "A"),
            RunRecord("2", "?", error="[unroll] boom"),
        ]
        m = evaluate_run(records, self.DATA)
        assert m.recall_at_2 == 0.5 and m.em == 1.0
        assert (m.total, m.completed, m.failed) == (2, 1, 1)
        write_report(m, tmp_path / "r.json", tmp_path / "p.jsonl", {"k": 5})
        report = json.loads((tmp_path / "r.json").read_text())
        assert report["counts"]["failed"] == 1 and "reference_points" in report

    def test_unknown_example(self):
        with pytest.raises(MissingExample):
            evaluate_run([RunRecord("zz", "?")], self.DATA)

    def test_duplicate_retrieved(self):
        with pytest.raises(ValidationError):
            RunRecord("1", "?", ["d1", "d1"])
