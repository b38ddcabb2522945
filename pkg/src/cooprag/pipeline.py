"""Configuration and end-to-end orchestration.

Single-step flow for one question::

    unroll -> serialize -> encode -> search (top n) -> rerank (top k)
           -> complete_chain -> generate_answer

``key_extract`` mode replaces the last two stages with up to
``key_extract.max_iterations`` rounds of search/rerank/key-sentence
extraction, falling back to the single-step answer when no round yields one.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal

import yaml

from .chain import (
    Answer,
    CompletionContext,
    KeyExtractState,
    complete_chain,
    generate_answer,
    key_extract_step,
    unified_reasoning,
)
from .core import Document, QaExample, serialize_unrolled
from .embeddings import (
    MAX_SEQ_LEN,
    EmbeddingStore,
    FixtureEncoder,
    HashingEncoder,
    HttpEncoder,
    cls_vector,
    encode,
    encode_many,
    load_store,
    save_store,
)
from .errors import CoopRagError, StageError, ValidationError
from .evaluation import Metrics, RunRecord, evaluate_run, load_corpus, load_qa, write_report
from .gateway import ChatGateway, ChatRequest, GatewayConfig, HttpChatGateway, MockGateway
from .index import FlatIndex, build_index
from .prompts import load_template
from .rala import RerankConfig, Strategy, rerank, select_candidate_layers
from .training import DEFAULT_TAU
from .unrolling import unroll

logger = logging.getLogger(__name__)


@dataclass
class Paths:
    corpus: str | None = None
    qa: str | None = None
    store: str | None = None
    index: str | None = None
    prompts: str | None = None
    llm_fixtures: str | None = None
    encoder_fixtures: str | None = None
    out_dir: str | None = None


@dataclass
class EncoderConfig:
    kind: Literal["hashing", "fixture", "http"] = "hashing"
    layers: int = 12
    dim: int = 64
    url: str | None = None
    includes_embedding_layer: bool = False
    timeout_s: float = 30.0
    max_in_flight: int = 4


@dataclass
class KeyExtractConfig:
    max_iterations: int = 3
    documents: int = 10


@dataclass
class PipelineConfig:
    paths: Paths = field(default_factory=Paths)
    retrieval_n: int = 20
    rerank: RerankConfig = field(default_factory=RerankConfig)
    tau: float = DEFAULT_TAU
    alpha_mode: Literal["sub_questions", "chain_length"] = "sub_questions"
    gateway_kind: Literal["mock", "http"] = "mock"
    gateway: GatewayConfig = field(default_factory=GatewayConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    max_seq_len: int = MAX_SEQ_LEN
    mode: Literal["single_step", "key_extract"] = "single_step"
    unified_reasoning: bool = False
    key_extract: KeyExtractConfig = field(default_factory=KeyExtractConfig)
    unroll_attempts: int = 3
    completion_attempts: int = 3
    eval_workers: int = field(default_factory=lambda: os.cpu_count() or 1)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.retrieval_n < 1:
            raise ValidationError("retrieval_n must be positive")
        if self.rerank.k > self.retrieval_n:
            raise ValidationError(f"k={self.rerank.k} exceeds retrieval_n={self.retrieval_n}")
        if self.mode not in ("single_step", "key_extract"):
            raise ValidationError(f"unknown mode {self.mode!r}")
        if self.gateway_kind not in ("mock", "http"):
            raise ValidationError(f"unknown gateway kind {self.gateway_kind!r}")
        if self.tau <= 0:
            raise ValidationError("tau must be positive")

    def hyperparameters(self) -> dict:
        return {
            "retrieval_n": self.retrieval_n,
            "k": self.rerank.k,
            "strategy": self.rerank.strategy.value,
            "bucket_count": self.rerank.bucket_count,
            "seed": self.rerank.seed,
            "tau": self.tau,
            "alpha_mode": self.alpha_mode,
            "mode": self.mode,
            "unified_reasoning": self.unified_reasoning,
            "max_seq_len": self.max_seq_len,
        }


_SECTIONS = {
    "paths": Paths,
    "rerank": RerankConfig,
    "gateway": GatewayConfig,
    "encoder": EncoderConfig,
    "key_extract": KeyExtractConfig,
}


def _build(cls, data: dict, where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ValidationError(f"unknown keys in {where}: {sorted(unknown)}")
    return cls(**data)


def config_from_dict(data: dict, base_dir: str | Path | None = None) -> PipelineConfig:
    data = dict(data or {})
    kwargs: dict[str, Any] = {}
    for key, cls in _SECTIONS.items():
        if key in data:
            kwargs[key] = _build(cls, data.pop(key) or {}, key)
    if "paths" in kwargs and base_dir is not None:
        p = kwargs["paths"]
        for f in dataclasses.fields(p):
            value = getattr(p, f.name)
            if value is not None and not os.path.isabs(value):
                setattr(p, f.name, str(Path(base_dir) / value))
    kwargs.update(data)
    return _build(PipelineConfig, kwargs, "config")


def load_config(path) -> PipelineConfig:
    path = Path(path)
    data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    return config_from_dict(data, base_dir=path.parent)


def config_to_dict(config: PipelineConfig) -> dict:
    out = dataclasses.asdict(config)
    out["rerank"]["strategy"] = config.rerank.strategy.value
    return out


def with_overrides(config: PipelineConfig, **changes) -> PipelineConfig:
    """Copy of ``config`` with top-level fields, or ``section__field`` keys, replaced."""
    data = config_to_dict(config)
    for key, value in changes.items():
        if value is None:
            continue
        if "__" in key:
            section, name = key.split("__", 1)
            data[section][name] = value
        else:
            data[key] = value
    return config_from_dict(data)


def build_encoder(cfg: EncoderConfig, fixtures_path: str | None = None):
    if cfg.kind == "hashing":
        return HashingEncoder(layers=cfg.layers, dim=cfg.dim)
    if cfg.kind == "fixture":
        if not fixtures_path:
            raise ValidationError("fixture encoder needs paths.encoder_fixtures")
        return FixtureEncoder.load(fixtures_path)
    if cfg.kind == "http":
        if not cfg.url:
            raise ValidationError("http encoder needs encoder.url")
        return HttpEncoder(cfg.url, timeout=cfg.timeout_s, includes_embedding_layer=cfg.includes_embedding_layer)
    raise ValidationError(f"unknown encoder kind {cfg.kind!r}")


def build_gateway(config: PipelineConfig) -> ChatGateway:
    if config.gateway_kind == "mock":
        if not config.paths.llm_fixtures:
            raise ValidationError("mock gateway needs paths.llm_fixtures")
        return MockGateway.from_dir(config.paths.llm_fixtures)
    return HttpChatGateway(config.gateway)


def document_text(doc: Document) -> str:
    """Text handed to the encoder for a corpus document."""
    return f"{doc.title} {doc.text}" if doc.title else doc.text


# --- ingest / index --------------------------------------------------------------


@dataclass
class IngestResult:
    written: int
    failed: list[tuple[str, str]]

    @property
    def partial(self) -> bool:
        return bool(self.failed)


def cmd_ingest(corpus_path, out_store, provider, max_seq_len: int = MAX_SEQ_LEN, max_in_flight: int = 4) -> IngestResult:
    """Encode every corpus document and write the store.

    Documents that fail to encode are left out and reported; the rest are
    still written.
    """
    docs = load_corpus(corpus_path)
    outputs = encode_many([document_text(d) for d in docs], provider, max_seq_len, max_in_flight)
    store, failed = EmbeddingStore(), []
    for doc, out in zip(docs, outputs):
        if isinstance(out, Exception):
            logger.error("encoding %s failed: %s", doc.id, out)
            failed.append((doc.id, str(out)))
            continue
        try:
            store.add(doc.id, out)
        except CoopRagError as exc:
            failed.append((doc.id, str(exc)))
    save_store(store, out_store)
    return IngestResult(len(store), failed)


def cmd_build_index(store_path, index_path) -> FlatIndex:
    index = build_index(load_store(store_path))
    index.save(index_path)
    return index


# --- asking ----------------------------------------------------------------------


class _StageGateway(ChatGateway):
    """Per-question proxy that attributes LLM calls to the current stage."""

    def __init__(self, inner: ChatGateway, counts: dict[str, int]):
        self.inner = inner
        self.model = inner.model
        self.temperature = inner.temperature
        self.max_tokens = inner.max_tokens
        self.counts = counts
        self.stage = "?"

    def chat(self, request: ChatRequest) -> str:
        self.counts[self.stage] = self.counts.get(self.stage, 0) + 1
        return self.inner.chat(request)


class Pipeline:
    """Loaded artifacts plus the per-question flow. Safe to share across threads."""

    def __init__(self, config: PipelineConfig, gateway: ChatGateway | None = None, encoder=None):
        self.config = config
        try:
            paths = config.paths
            for name in ("corpus", "store", "index"):
                value = getattr(paths, name)
                if not value or not Path(value).exists():
                    raise FileNotFoundError(f"paths.{name} not found: {value}")
            self.documents = {d.id: d for d in load_corpus(paths.corpus)}
            self.store = load_store(paths.store)
            self.index = FlatIndex.load(paths.index)
            missing = [d for d in self.index.doc_ids if d not in self.store or d not in self.documents]
            if missing:
                raise ValidationError(f"index references unknown documents: {missing[:5]}")
            self.templates = {n: load_template(n, paths.prompts) for n in ("unroll", "complete", "answer", "unified", "key_extract")}
            self.encoder = encoder if encoder is not None else build_encoder(config.encoder, paths.encoder_fixtures)
            self.gateway = gateway if gateway is not None else build_gateway(config)
        except (OSError, CoopRagError) as exc:
            raise StageError("load", exc) from exc
        if config.rerank.strategy in (Strategy.NAIVE_GAP, Strategy.GAP_WEIGHTED):
            self.layers = select_candidate_layers(self.store.num_layers, config.rerank.bucket_count, config.rerank.seed)
        else:
            self.layers = None

    def _retrieve(self, query: str, k: int):
        u_emb = encode(query, self.encoder, self.config.max_seq_len)
        candidates = self.index.search(cls_vector(u_emb, u_emb.num_layers), self.config.retrieval_n)
        cfg = dataclasses.replace(self.config.rerank, k=k)
        ranked = rerank([c.doc_id for c in candidates], u_emb, self.store, cfg, self.layers)
        return candidates, ranked

    def ask(self, question: str, example_id: str = "adhoc") -> tuple[str, RunRecord]:
        cfg = self.config
        record = RunRecord(example_id=example_id, question=question)
        gw = _StageGateway(self.gateway, record.llm_calls)

        @contextmanager
        def stage(name: str):
            record.stages.append(name)
            gw.stage = name
            t0 = time.perf_counter()
            try:
                yield
            except StageError:
                raise
            except Exception as exc:
                raise StageError(name, exc) from exc
            finally:
                record.timings[name] = record.timings.get(name, 0.0) + time.perf_counter() - t0

        with stage("unroll"):
            u = unroll(question, gw, self.templates["unroll"], cfg.unroll_attempts)
            record.artifacts["unrolled"] = {
                "sub_questions": list(u.sub_questions),
                "chain": u.chain.as_lists(),
                "hop_count": u.hop_count,
            }
        with stage("serialize"):
            query = serialize_unrolled(u)
            record.artifacts["query"] = query

        if cfg.mode == "key_extract":
            answer, top = self._key_extract(u, query, record, stage, gw)
        else:
            with stage("retrieve"):
                candidates, top = self._retrieve(query, cfg.rerank.k)
                record.artifacts["candidates"] = [[c.doc_id, c.score] for c in candidates]
                record.artifacts["reranked"] = [[r.doc_id, r.score] for r in top]
            answer = self._reason(u, top, record, stage, gw)

        record.retrieved = [r.doc_id for r in top]
        record.answer = answer
        return answer, record

    def _reason(self, u, top, record, stage, gw) -> str:
        cfg = self.config
        ctx = CompletionContext(tuple(self.documents[r.doc_id] for r in top), u.original, u.sub_questions, u.chain)
        if cfg.unified_reasoning:
            with stage("unified_reasoning"):
                completed, answer = unified_reasoning(ctx, gw, self.templates["unified"])
        else:
            with stage("complete_chain"):
                completed = complete_chain(ctx, gw, self.templates["complete"], cfg.completion_attempts)
            with stage("generate_answer"):
                answer = generate_answer(dataclasses.replace(ctx, chain=completed), gw, self.templates["answer"])
        record.artifacts["completed_chain"] = completed.as_lists()
        return answer

    def _key_extract(self, u, query, record, stage, gw):
        cfg = self.config
        state = KeyExtractState(query, max_iterations=cfg.key_extract.max_iterations)
        n_docs = min(cfg.key_extract.documents, cfg.retrieval_n)
        steps = []
        top = []
        while state.iteration < state.max_iterations:
            with stage("retrieve"):
                _, top = self._retrieve(state.augmented_query, n_docs)
            with stage("key_extract"):
                outcome = key_extract_step(state, [self.documents[r.doc_id] for r in top], gw, self.templates["key_extract"])
            steps.append({"doc_index": outcome.doc_index, "key_sentence": outcome.key_sentence})
            record.artifacts["key_extract"] = steps
            if isinstance(outcome, Answer):
                record.artifacts["reranked"] = [[r.doc_id, r.score] for r in top]
                return outcome.text, top
            state = outcome.state
        logger.info("KeyExtract hit %d iterations without an answer; using single-step reasoning", state.max_iterations)
        record.artifacts["key_extract_fallback"] = True
        top = top[: cfg.rerank.k]
        record.artifacts["reranked"] = [[r.doc_id, r.score] for r in top]
        return self._reason(u, top, record, stage, gw), top


def cmd_ask(question: str, config: PipelineConfig, gateway=None, encoder=None) -> tuple[str, RunRecord]:
    pipeline = Pipeline(config, gateway, encoder)
    answer, record = pipeline.ask(question)
    if config.paths.out_dir:
        out = Path(config.paths.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "ask_record.json").write_text(json.dumps(record.to_dict(), indent=2, ensure_ascii=False), encoding="utf-8")
    return answer, record


def run_examples(pipeline: Pipeline, examples: list[QaExample], workers: int = 1) -> list[RunRecord]:
    def one(ex: QaExample) -> RunRecord:
        try:
            return pipeline.ask(ex.question, ex.id)[1]
        except StageError as exc:
            logger.error("example %s failed: %s", ex.id, exc)
            return RunRecord(example_id=ex.id, question=ex.question, error=str(exc))

    if workers <= 1:
        return [one(ex) for ex in examples]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, examples))


def cmd_eval(qa_path, config: PipelineConfig, gateway=None, encoder=None, out_dir=None) -> Metrics:
    """Answer every QA example and write ``report.json``, ``per_example.jsonl`` and ``runs.jsonl``.

    Failed examples are marked in the report, never abort the run.
    """
    examples = load_qa(qa_path)
    pipeline = Pipeline(config, gateway, encoder)
    records = run_examples(pipeline, examples, config.eval_workers)
    metrics = evaluate_run(records, examples)
    out_dir = out_dir or config.paths.out_dir
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_report(metrics, out / "report.json", out / "per_example.jsonl", config=config.hyperparameters())
        with open(out / "runs.jsonl", "w", encoding="utf-8") as f:
            for rec in records:
                f.write(json.dumps(rec.to_dict(), ensure_ascii=False) + "\n")
    return metrics
