import json
from pathlib import Path

import numpy as np
import pytest

from cooprag.core import Document, QaExample
from cooprag.embeddings import FixtureEncoder, HashingEncoder, encode, load_store
from cooprag.errors import StageError, ValidationError
from cooprag.evaluation import save_corpus, save_qa
from cooprag.gateway import ChatGateway, MockGateway
from cooprag.pipeline import (
    Pipeline,
    PipelineConfig,
    cmd_ask,
    cmd_build_index,
    cmd_eval,
    cmd_ingest,
    config_from_dict,
    document_text,
    load_config,
    with_overrides,
)
from cooprag.rala import RerankConfig
from cooprag.toy import ADVERSARIAL_IDS, DOCUMENTS, ITEMS, adversarial_pair

STAGES = ["unroll", "serialize", "retrieve", "complete_chain", "generate_answer"]


class TestConfig:
    def test_k_not_above_n(self):
        with pytest.raises(ValidationError):
            PipelineConfig(retrieval_n=3, rerank=RerankConfig(k=5))

    def test_unknown_keys_rejected(self):
        with pytest.raises(ValidationError):
            config_from_dict({"retreival_n": 3})
        with pytest.raises(ValidationError):
            config_from_dict({"rerank": {"kk": 3}})

    def test_relative_paths_and_overrides(self, tmp_path):
        (tmp_path / "c.yaml").write_text("paths:\n  corpus: data/c.jsonl\nrerank:\n  strategy: naive-gap\n")
        cfg = load_config(tmp_path / "c.yaml")
        assert cfg.paths.corpus == str(tmp_path / "data/c.jsonl")
        assert cfg.tau == 0.05 and cfg.retrieval_n == 20 and cfg.rerank.k == 5
        changed = with_overrides(cfg, rerank__k=2, mode="key_extract", tau=None)
        assert changed.rerank.k == 2 and changed.mode == "key_extract" and changed.tau == 0.05
        assert changed.rerank.strategy.value == "naive-gap"


class TestIngest:
    def test_store_and_rerun_identical(self, tmp_path):
        save_corpus(tmp_path / "c.jsonl", DOCUMENTS)
        enc = HashingEncoder(layers=4, dim=8)
        res = cmd_ingest(tmp_path / "c.jsonl", tmp_path / "a.crle", enc)
        cmd_ingest(tmp_path / "c.jsonl", tmp_path / "b.crle", enc)
        assert res.written == 10 and not res.partial
        assert (tmp_path / "a.crle").read_bytes() == (tmp_path / "b.crle").read_bytes()
        assert len(cmd_build_index(tmp_path / "a.crle", tmp_path / "i.crfi")) == 10

    def test_partial_failure(self, tmp_path):
        save_corpus(tmp_path / "c.jsonl", DOCUMENTS)
        src = HashingEncoder(layers=4, dim=8)
        enc = FixtureEncoder({document_text(d): encode(document_text(d), src) for d in DOCUMENTS[1:]})
        res = cmd_ingest(tmp_path / "c.jsonl", tmp_path / "s.crle", enc)
        assert res.partial and [doc_id for doc_id, _ in res.failed] == ["d01"]
        store = load_store(tmp_path / "s.crle")
        assert len(store) == 9 and "d01" not in store


class TestAsk:
    def test_single_step(self, toy_workspace):
        cfg = load_config(toy_workspace)
        item = ITEMS[0]
        answer, record = cmd_ask(item.example.question, cfg)
        assert answer == item.example.gold_answers[0]
        assert record.stages == STAGES
        assert record.retrieved[0] in item.example.gold_doc_ids
        assert record.llm_calls == {"unroll": 1, "complete_chain": 1, "generate_answer": 1}
        assert record.artifacts["query"].startswith(item.example.question)
        saved = json.loads((Path(cfg.paths.out_dir) / "ask_record.json").read_text())
        assert saved["answer"] == answer

    def test_key_extract_two_calls(self, toy_workspace):
        cfg = with_overrides(load_config(toy_workspace), mode="key_extract")
        answer, record = Pipeline(cfg).ask(ITEMS[1].example.question)
        assert answer == "Lanmere"
        assert record.llm_calls["key_extract"] == 2
        assert record.stages == ["unroll", "serialize", "retrieve", "key_extract", "retrieve", "key_extract"]
        assert len(record.artifacts["key_extract"]) == 2

    def test_key_extract_fallback(self, toy_workspace):
        cfg = with_overrides(load_config(toy_workspace), mode="key_extract", key_extract__max_iterations=1)
        # the single allowed round says "False"; fall back to completion + answer
        answer, record = Pipeline(cfg).ask(ITEMS[0].example.question)
        assert answer == "Vessen Gallery"
        assert record.artifacts["key_extract_fallback"] is True
        assert record.stages[-2:] == ["complete_chain", "generate_answer"]

    def test_unified(self, toy_workspace):
        cfg = with_overrides(load_config(toy_workspace), unified_reasoning=True)
        answer, record = Pipeline(cfg).ask(ITEMS[2].example.question)
        assert answer == "Ilse Varga" and record.stages[-1] == "unified_reasoning"

    def test_missing_index_fails_fast(self, toy_workspace):
        cfg = load_config(toy_workspace)
        Path(cfg.paths.index).unlink()
        gw = MockGateway.from_dir(cfg.paths.llm_fixtures)
        with pytest.raises(StageError) as err:
            cmd_ask("anything", cfg, gateway=gw)
        assert err.value.stage == "load" and gw.calls == []

    def test_stage_annotated_errors(self, toy_workspace):
        with pytest.raises(StageError) as err:
            cmd_ask("A question nobody recorded?", load_config(toy_workspace))
        assert err.value.stage == "unroll"


class TestEval:
    def test_toy_eval(self, toy_workspace):
        cfg = load_config(toy_workspace)
        m = cmd_eval(cfg.paths.qa, cfg)
        assert m.em == 1.0 and m.recall_at_2 == 1.0 and m.failed == 0
        out = Path(cfg.paths.out_dir)
        assert len((out / "per_example.jsonl").read_text().splitlines()) == len(ITEMS)
        runs = [json.loads(l) for l in (out / "runs.jsonl").read_text().splitlines()]
        assert [r["example_id"] for r in runs] == [it.example.id for it in ITEMS]
        assert all(r["timings"] for r in runs)

    def test_missing_fixture_marks_failure(self, toy_workspace, tmp_path):
        cfg = load_config(toy_workspace)
        qa = tmp_path / "qa.jsonl"
        save_qa(qa, [ITEMS[0].example, QaExample("new", "Unrecorded question?", ("x",), ("d01",))])
        m = cmd_eval(qa, cfg)
        assert (m.total, m.completed, m.failed) == (2, 1, 1)
        assert m.em == 1.0
        failed = [r for r in m.per_example if r["status"] == "failed"][0]
        assert failed["id"] == "new" and failed["error"].startswith("[unroll]")


class _ScriptedLLM(ChatGateway):
    def chat(self, request):
        p = request.messages[-1].content
        if "**Original Question**" in p:
            return 'Hop Count: 1\nSub-questions: ["s?"]\nTriple Reasoning Chain: [["x", "r", "<FILL>"]]'
        if "GENERATED_ANSWER" in p:
            return "<<ANS>>y<<ANS>>"
        return 'Reconstructed Reasoning Chain: [["x", "r", "y"]]'


def test_strategies_give_distinct_reports_on_adversarial_corpus(tmp_path):
    u, pos, dis = adversarial_pair(np.random.default_rng(7))
    docs = [Document(ADVERSARIAL_IDS[0], "P", "positive"), Document(ADVERSARIAL_IDS[1], "D", "distractor")]
    save_corpus(tmp_path / "c.jsonl", docs)
    save_qa(tmp_path / "qa.jsonl", [QaExample("q", "Q?", ("y",), (ADVERSARIAL_IDS[0],))])
    enc = FixtureEncoder({document_text(docs[0]): pos, document_text(docs[1]): dis, "Q? s? x r <FILL>": u})
    cmd_ingest(tmp_path / "c.jsonl", tmp_path / "s.crle", enc)
    cmd_build_index(tmp_path / "s.crle", tmp_path / "i.crfi")
    base = config_from_dict(
        {
            "paths": {"corpus": "c.jsonl", "store": "s.crle", "index": "i.crfi"},
            "retrieval_n": 2,
            "rerank": {"k": 1},
            "eval_workers": 1,
        },
        base_dir=tmp_path,
    )
    reports = {}
    for strategy in ("plain-maxsim", "gap-weighted"):
        cfg = with_overrides(base, rerank__strategy=strategy)
        m = cmd_eval(tmp_path / "qa.jsonl", cfg, gateway=_ScriptedLLM(), encoder=enc, out_dir=tmp_path / strategy)
        reports[strategy] = (tmp_path / strategy / "report.json").read_bytes()
        assert m.recall_at_2 == (1.0 if strategy == "gap-weighted" else 0.0)
    assert reports["plain-maxsim"] != reports["gap-weighted"]
