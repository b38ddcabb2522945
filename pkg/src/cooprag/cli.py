"""Command-line entry point: ``cooprag <command> [options]``.

Exit status is 0 on success, 1 on error and 2 on partial failure (documents
that could not be ingested, examples that failed during eval).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from .core import ReasoningChain, UnrolledQuestion
from .embeddings import cls_vector, encode, load_store
from .errors import CoopRagError
from .index import FlatIndex
from .pipeline import (
    PipelineConfig,
    build_encoder,
    cmd_ask,
    cmd_build_index,
    cmd_eval,
    cmd_ingest,
    load_config,
    with_overrides,
)
from .rala import RerankConfig, Strategy, rerank, select_candidate_layers
from .training import BatchSpec, check_gradient, load_batch_fixture

log = logging.getLogger("cooprag")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--n", type=int, dest="retrieval_n", help="first-stage retrieval depth")
    p.add_argument("--k", type=int, help="documents kept after reranking")
    p.add_argument("--rerank-strategy", choices=[s.value for s in Strategy])
    p.add_argument("--bucket-count", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--alpha-mode", choices=["sub_questions", "chain_length"])
    p.add_argument("--mode", choices=["single_step", "key_extract"])
    p.add_argument("--unified", action="store_true", default=None, help="complete chain and answer in one call")
    p.add_argument("--workers", type=int, dest="eval_workers")
    p.add_argument("--out-dir")
    p.add_argument("--fixtures", dest="llm_fixtures", help="mock LLM fixture directory")
    p.add_argument("--gateway", choices=["mock", "http"], dest="gateway_kind")


def _config(args) -> PipelineConfig:
    config = load_config(args.config) if args.config else PipelineConfig()
    return with_overrides(
        config,
        retrieval_n=args.retrieval_n,
        tau=args.tau,
        alpha_mode=args.alpha_mode,
        mode=args.mode,
        unified_reasoning=args.unified,
        eval_workers=args.eval_workers,
        gateway_kind=args.gateway_kind,
        rerank__k=args.k,
        rerank__strategy=args.rerank_strategy,
        rerank__bucket_count=args.bucket_count,
        rerank__seed=args.seed,
        paths__out_dir=args.out_dir,
        paths__llm_fixtures=args.llm_fixtures,
    )


def _run_ingest(args) -> int:
    config = _config(args)
    corpus = args.corpus or config.paths.corpus
    store = args.store or config.paths.store
    if not corpus or not store:
        raise CoopRagError("ingest needs a corpus and an output store path")
    result = cmd_ingest(
        corpus, store, build_encoder(config.encoder, config.paths.encoder_fixtures),
        config.max_seq_len, config.encoder.max_in_flight,
    )
    print(f"wrote {result.written} documents to {store}")
    for doc_id, reason in result.failed:
        print(f"FAILED {doc_id}: {reason}", file=sys.stderr)
    return 2 if result.partial else 0


def _run_build_index(args) -> int:
    config = _config(args)
    store = args.store or config.paths.store
    index = args.index or config.paths.index
    built = cmd_build_index(store, index)
    print(f"indexed {len(built)} documents into {index}")
    return 0


def _run_ask(args) -> int:
    answer, record = cmd_ask(args.question, _config(args))
    if args.json:
        print(json.dumps(record.to_dict(), indent=2, ensure_ascii=False))
    else:
        print(answer)
    return 0


def _run_eval(args) -> int:
    config = _config(args)
    qa = args.qa or config.paths.qa
    metrics = cmd_eval(qa, config)
    print(json.dumps(metrics.summary(), indent=2, sort_keys=True))
    return 2 if metrics.failed else 0


def _run_rerank_bench(args) -> int:
    config = _config(args)
    store = load_store(config.paths.store)
    encoder = build_encoder(config.encoder, config.paths.encoder_fixtures)
    u = encode(args.query, encoder, config.max_seq_len)
    if args.candidates:
        candidates = args.candidates.split(",")
    else:
        index = FlatIndex.load(config.paths.index)
        candidates = [r.doc_id for r in index.search(cls_vector(u, u.num_layers), config.retrieval_n)]
    layers = select_candidate_layers(store.num_layers, config.rerank.bucket_count, config.rerank.seed)
    strategies = [Strategy(args.rerank_strategy)] if args.rerank_strategy else list(Strategy)
    out = {"candidate_layers": list(layers.layers)}
    for strategy in strategies:
        cfg = RerankConfig(strategy, config.rerank.bucket_count, config.rerank.seed, len(candidates))
        out[strategy.value] = [[r.doc_id, r.score] for r in rerank(candidates, u, store, cfg, layers)]
    print(json.dumps(out, indent=2))
    return 0


def _random_batch(rng: np.random.Generator, max_b: int) -> tuple[BatchSpec, np.ndarray]:
    b = int(rng.integers(1, max_b + 1))
    questions = []
    for _ in range(b):
        subs = tuple(f"sub {j}" for j in range(int(rng.integers(0, 6))))
        chain = ReasoningChain.from_lists([["x", "r", "<FILL>"]])
        questions.append(UnrolledQuestion("q", subs, chain))
    return BatchSpec(tuple(questions)), rng.uniform(-1, 1, size=(b, 2 * b))


def _run_loss_check(args) -> int:
    if args.fixture:
        cases = [load_batch_fixture(args.fixture)]
    else:
        rng = np.random.default_rng(args.seed)
        cases = [_random_batch(rng, args.max_batch) for _ in range(args.batches)]
    worst = max(check_gradient(batch, scores, args.h) for batch, scores in cases)
    ok = worst < args.tolerance
    print(f"{len(cases)} batches, max relative gradient error {worst:.3e} ({'ok' if ok else 'FAIL'})")
    return 0 if ok else 1


def _run_toy(args) -> int:
    from .toy import build_workspace

    path = build_workspace(args.out_dir)
    print(f"toy workspace ready; try: cooprag eval --config {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cooprag", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="encode a JSONL corpus into an embedding store")
    _add_config_flags(p)
    p.add_argument("--corpus")
    p.add_argument("--store")
    p.set_defaults(func=_run_ingest)

    p = sub.add_parser("build-index", help="build the flat CLS index from a store")
    _add_config_flags(p)
    p.add_argument("--store")
    p.add_argument("--index")
    p.set_defaults(func=_run_build_index)

    p = sub.add_parser("ask", help="answer one question")
    _add_config_flags(p)
    p.add_argument("question")
    p.add_argument("--json", action="store_true", help="print the full run record")
    p.set_defaults(func=_run_ask)

    p = sub.add_parser("eval", help="run a QA set and write a report")
    _add_config_flags(p)
    p.add_argument("--qa")
    p.set_defaults(func=_run_eval)

    p = sub.add_parser("rerank-bench", help="score candidates offline under each strategy")
    _add_config_flags(p)
    p.add_argument("--query", required=True, help="query text, encoded as-is")
    p.add_argument("--candidates", help="comma-separated doc ids (default: top-n from the index)")
    p.set_defaults(func=_run_rerank_bench)

    p = sub.add_parser("loss-check", help="compare loss gradients with finite differences")
    p.add_argument("--fixture", help="batch fixture JSON; random batches when omitted")
    p.add_argument("--batches", type=int, default=50)
    p.add_argument("--max-batch", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=_run_loss_check)

    p = sub.add_parser("toy", help="write a self-contained demo workspace")
    p.add_argument("out_dir")
    p.set_defaults(func=_run_toy)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (CoopRagError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
