"""Small synthetic workspace for demos and end-to-end tests.

Ten invented encyclopedia entries, a handful of two-hop questions over them,
and a scripted responder standing in for the LLM. :func:`build_workspace`
writes corpus, QA set, store, index, config and recorded mock fixtures so the
whole pipeline runs offline.

Also home of the adversarial construction used to compare gap-weighted
reranking against plain MaxSim.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .core import Document, QaExample
from .embeddings import LayeredEmbeddings
from .evaluation import save_corpus, save_qa
from .gateway import ChatRequest, RecordingGateway

DOCUMENTS = (
    Document("d01", "Marlow Fenwick", "Marlow Fenwick was a landscape painter born in Quillbury. Fenwick painted The Amber Orchard in 1871."),
    Document("d02", "The Amber Orchard", "The Amber Orchard is an oil painting by Marlow Fenwick. The painting hangs in the Vessen Gallery."),
    Document("d03", "Vessen Gallery", "The Vessen Gallery is an art museum in Dorrance. The museum was founded by the collector Ilse Varga."),
    Document("d04", "Quillbury", "Quillbury is a river town in the province of Lanmere, known for its paper mills."),
    Document("d05", "Lanmere", "Lanmere is a northern province whose capital is Harrowgate."),
    Document("d06", "Ilse Varga", "Ilse Varga was a textile merchant and art collector born in Harrowgate in 1821."),
    Document("d07", "Dorrance", "Dorrance is a port city on the Selkie Coast with about eighty thousand residents."),
    Document("d08", "Brannock Bridge", "Brannock Bridge is a stone arch bridge crossing the river Tessel near Ostrel."),
    Document("d09", "Tollin Observatory", "The Tollin Observatory is an astronomical observatory on Mount Carrow."),
    Document("d10", "Grey Sea", "The Grey Sea is a cold shallow sea known for winter storms and herring fisheries."),
)


@dataclass(frozen=True)
class ToyItem:
    example: QaExample
    sub_questions: tuple[str, ...]
    masked_chain: tuple[tuple[str, str, str], ...]
    completed_chain: tuple[tuple[str, str, str], ...]
    key_sentences: tuple[str, str]  # continue-step sentence, answer-step sentence


ITEMS = (
    ToyItem(
        QaExample("q1", "In which museum does the painting by Marlow Fenwick hang?", ("Vessen Gallery",), ("d01", "d02")),
        ("Which painting did Marlow Fenwick paint?", "In which museum does The Amber Orchard hang?"),
        (("Marlow Fenwick", "painted", "<UNCERTAIN>"), ("<UNCERTAIN>", "hangs in", "<FILL>")),
        (("Marlow Fenwick", "painted", "The Amber Orchard"), ("The Amber Orchard", "hangs in", "Vessen Gallery")),
        ("Fenwick painted The Amber Orchard in 1871.", "The painting hangs in the Vessen Gallery."),
    ),
    ToyItem(
        QaExample("q2", "In which province is the birthplace of Marlow Fenwick?", ("Lanmere",), ("d01", "d04")),
        ("Where was Marlow Fenwick born?", "In which province is Quillbury?"),
        (("Marlow Fenwick", "born in", "Quillbury"), ("Quillbury", "is in province", "<FILL>")),
        (("Marlow Fenwick", "born in", "Quillbury"), ("Quillbury", "is in province", "Lanmere")),
        ("Marlow Fenwick was a landscape painter born in Quillbury.", "Quillbury is a river town in the province of Lanmere, known for its paper mills."),
    ),
    ToyItem(
        QaExample("q3", "Who founded the museum that holds The Amber Orchard?", ("Ilse Varga",), ("d02", "d03")),
        ("Which museum holds The Amber Orchard?", "Who founded the Vessen Gallery?"),
        (("The Amber Orchard", "hangs in", "<UNCERTAIN>"), ("<UNCERTAIN>", "founded by", "<FILL>")),
        (("The Amber Orchard", "hangs in", "Vessen Gallery"), ("Vessen Gallery", "founded by", "Ilse Varga")),
        ("The painting hangs in the Vessen Gallery.", "The museum was founded by the collector Ilse Varga."),
    ),
    ToyItem(
        QaExample("q4", "On which coast is the city where the Vessen Gallery is located?", ("Selkie Coast",), ("d03", "d07")),
        ("In which city is the Vessen Gallery?", "On which coast is Dorrance?"),
        (("Vessen Gallery", "located in", "<UNCERTAIN>"), ("<UNCERTAIN>", "lies on", "<FILL>")),
        (("Vessen Gallery", "located in", "Dorrance"), ("Dorrance", "lies on", "Selkie Coast")),
        ("The Vessen Gallery is an art museum in Dorrance.", "Dorrance is a port city on the Selkie Coast with about eighty thousand residents."),
    ),
)


def _item_for(question_text: str) -> ToyItem:
    # longest match first so a question is never shadowed by a prefix of another
    for item in sorted(ITEMS, key=lambda it: -len(it.example.question)):
        if question_text.strip().startswith(item.example.question):
            return item
    raise KeyError(f"toy responder does not know {question_text[:60]!r}")


def _between(text: str, start: str, end: str | None) -> str:
    i = text.index(start) + len(start)
    j = text.index(end, i) if end else len(text)
    return text[i:j].strip()


def _chain_json(rows) -> str:
    return json.dumps([list(r) for r in rows], ensure_ascii=False)


def toy_responder(request: ChatRequest) -> str:
    """Scripted answers for the prompts issued while processing :data:`ITEMS`."""
    prompt = request.messages[-1].content
    if "**Original Question**" in prompt:
        item = _item_for(_between(prompt, "**Original Question**", None))
        return (
            "Hop Count: 2\n\n"
            "Reasoning Structure: resolve the bridging entity, then ask the final relation.\n\n"
            f"Sub-questions: {json.dumps(list(item.sub_questions), ensure_ascii=False)}\n\n"
            f"Triple Reasoning Chain:\n{_chain_json(item.masked_chain)}"
        )
    if "**Documents**" in prompt:
        query = _between(prompt, "**Question**", "**Documents**")
        item = _item_for(query)
        first, last = item.key_sentences
        if first not in query:
            return f'([1], "{first}"). So the answer is: False'
        return f'([1], "{last}"). So the answer is: {item.example.gold_answers[0]}'
    item = _item_for(_between(prompt, "MAIN_QUESTIONS:", "SUB_QUESTIONS:"))
    chain = f"Reconstructed Reasoning Chain:\n{_chain_json(item.completed_chain)}"
    answer = f"GENERATED_ANSWER:\n<<ANS>>{item.example.gold_answers[0]}<<ANS>>"
    if "GENERATED_ANSWER" in prompt and "Reconstructed Reasoning Chain" in prompt:
        return f"{chain}\n\n{answer}"  # unified prompt
    if "GENERATED_ANSWER" in prompt:
        return answer
    return chain


def default_config_dict() -> dict:
    return {
        "paths": {
            "corpus": "corpus.jsonl",
            "qa": "qa.jsonl",
            "store": "store.crle",
            "index": "index.crfi",
            "llm_fixtures": "fixtures",
            "out_dir": "runs",
        },
        "retrieval_n": 10,
        "rerank": {"strategy": "gap-weighted", "bucket_count": 4, "seed": 0, "k": 5},
        "gateway_kind": "mock",
        "encoder": {"kind": "hashing", "layers": 12, "dim": 64},
        "eval_workers": 2,
    }


def build_workspace(out_dir) -> Path:
    """Write a runnable toy workspace and return the path of its ``config.yaml``."""
    from .pipeline import (
        Pipeline,
        build_encoder,
        cmd_build_index,
        cmd_ingest,
        config_from_dict,
        run_examples,
        with_overrides,
    )

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_corpus(out / "corpus.jsonl", DOCUMENTS)
    save_qa(out / "qa.jsonl", [it.example for it in ITEMS])
    raw = default_config_dict()
    config_path = out / "config.yaml"
    config_path.write_text(yaml.safe_dump(raw, sort_keys=False), encoding="utf-8")

    config = config_from_dict(raw, base_dir=out)
    encoder = build_encoder(config.encoder)
    cmd_ingest(config.paths.corpus, config.paths.store, encoder, config.max_seq_len)
    cmd_build_index(config.paths.store, config.paths.index)

    recorder = RecordingGateway(toy_responder, Path(config.paths.llm_fixtures))
    examples = [it.example for it in ITEMS]
    variants = (
        {},
        {"mode": "key_extract"},
        {"unified_reasoning": True},
        {"rerank__strategy": "plain-maxsim"},
    )
    for change in variants:
        pipeline = Pipeline(with_overrides(config, **change), gateway=recorder, encoder=encoder)
        for record in run_examples(pipeline, examples):
            if record.failed:
                raise RuntimeError(f"toy workspace recording failed: {record.error}")
    return config_path


# --- adversarial construction ------------------------------------------------


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _at_cosine(target: np.ndarray, cos: float, rng: np.random.Generator) -> np.ndarray:
    """Unit vector with cosine ``cos`` to unit vector ``target``."""
    r = rng.standard_normal(target.size)
    orth = _unit(r - (r @ target) * target)
    return cos * target + np.sqrt(max(0.0, 1.0 - cos * cos)) * orth


def adversarial_pair(
    rng: np.random.Generator,
    num_layers: int = 12,
    dim: int = 32,
    query_tokens: int = 6,
    doc_tokens: int = 12,
    delta: float = 0.3,
) -> tuple[LayeredEmbeddings, LayeredEmbeddings, LayeredEmbeddings]:
    """Query, positive and distractor where only premature CLS states differ.

    Both documents share a bit-identical final layer, so final-layer MaxSim
    ties. At every premature layer the positive's CLS state is ``delta`` less
    similar to the query CLS than the distractor's, which widens its CLS gap
    by ``delta``. Document tokens sit close to query tokens so MaxSim is
    positive.
    """
    u = rng.standard_normal((num_layers, query_tokens, dim))
    q_cls = _unit(u[-1, 0])
    u[-1, 0] = q_cls

    final = np.empty((doc_tokens, dim))
    final[0] = _at_cosine(q_cls, rng.uniform(0.3, 0.9), rng)
    src = rng.integers(query_tokens, size=doc_tokens - 1)
    final[1:] = u[-1, src] + 0.1 * rng.standard_normal((doc_tokens - 1, dim))

    shared = rng.standard_normal((num_layers - 1, doc_tokens, dim))
    pos = np.concatenate([shared, final[None]], axis=0)
    dis = pos.copy()
    for l in range(num_layers - 1):
        c = rng.uniform(-0.6, 0.9)
        dis[l, 0] = _at_cosine(q_cls, c, rng)
        pos[l, 0] = _at_cosine(q_cls, c - delta, rng)
    return (
        LayeredEmbeddings(u.astype(np.float32)),
        LayeredEmbeddings(pos.astype(np.float32)),
        LayeredEmbeddings(dis.astype(np.float32)),
    )


ADVERSARIAL_IDS = ("z_pos", "a_dis")  # id order makes a plain tie favour the distractor
