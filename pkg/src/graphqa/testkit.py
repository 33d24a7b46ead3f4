"""Deterministic fixtures: a small multi-hop corpus, scripted transcripts
that drive the engine over it, and randomized store generators for property
tests. `python -m graphqa.testkit --out DIR` writes the corpus, dataset, and
transcripts as files so the CLI can be exercised end to end offline.
"""

from __future__ import annotations

import argparse
import json
import random
import sys
from pathlib import Path

from .embedding import HashedEmbedder
from .indexer import Document, IndexConfig, build_index
from .kb import GraphKB
from .retrieval import Retriever

# A four-document corpus holding a 4-hop chain:
#   WIZE -(licensed in)-> Winchester -(became capital of)-> Jefferson
#   Ward Township -(located in)-> Randolph County -(lies in)-> Jefferson
# Every entity's first mention sits in a filler sentence, so entity
# descriptions never contain a golden fact; the goldens live only in chunk
# texts and relation descriptions.
FIXTURE_DOCS = [
    Document(
        doc_id="station",
        title="WIZE",
        body=(
            "WIZE broadcasts a classic jazz format to listeners across the "
            "valley. Winchester hosts several commercial radio transmitters. "
            "WIZE is licensed in Winchester. The signal first went out during "
            "the postwar boom."
        ),
    ),
    Document(
        doc_id="township",
        title="Ward Township",
        body=(
            "Ward Township covers a stretch of prairie farmland. Randolph "
            "County maintains a small courthouse and a seasonal fair. Ward "
            "Township is located in Randolph County. Each autumn, grain "
            "wagons still travel the gravel roads."
        ),
    ),
    Document(
        doc_id="county",
        title="Randolph County",
        body=(
            "Randolph County reports its census figures every decade. "
            "Jefferson admitted dozens of rural counties during the "
            "settlement era. Randolph County lies in the state of Jefferson. "
            "Many county roads there follow the old survey grid."
        ),
    ),
    Document(
        doc_id="capital",
        title="Winchester",
        body=(
            "Winchester stands on a bluff above the river crossing. "
            "Jefferson celebrates its admission anniversary each winter. "
            "Winchester became the capital of Jefferson in 1813. A "
            "courthouse quarter grew around the new seat of government."
        ),
    ),
]

FIXTURE_QUESTION = (
    "When did the town where WIZE is licensed become the capital of the "
    "state where Ward Township is located?"
)
FIXTURE_ANSWER = "1813"
FIXTURE_GOLDENS = [
    "WIZE is licensed in Winchester.",
    "Ward Township is located in Randolph County.",
    "Randolph County lies in the state of Jefferson.",
    "Winchester became the capital of Jefferson in 1813.",
]

# Sub-queries the scripted decomposition and expansion emit, in processing
# order; each one's retrieval is expected to surface one golden carrier.
FIXTURE_SUBQUERIES = {
    "semantic_1": "Which town is WIZE licensed in?",
    "relational_1": "Ward Township located in which county",
    "relational_2": "Randolph County lies in which state",
    "semantic_2": "When did Winchester become the capital of Jefferson?",
}


def fixture_kb() -> GraphKB:
    kb, _report = build_index(FIXTURE_DOCS, IndexConfig())
    return kb

def fixture_retriever(top_k: int = 2, hop_expansion: int = 1) -> Retriever:
    retriever = Retriever(
        fixture_kb(), HashedEmbedder(), top_k=top_k, hop_expansion=hop_expansion
    )
    retriever.build()
    return retriever


def deepsearch_transcript() -> list[dict]:
    """Scripted responses that walk the fixture to a verified answer in one
    expansion round. KEEP indices are positions in the refine candidate
    listing (chunks, then entities, then relations) at top_k=2."""
    sq = FIXTURE_SUBQUERIES
    return [
        {"template": "qd_semantic", "response": f"1. {sq['semantic_1']}"},
        {"template": "qd_relational", "response": f"1. {sq['relational_1']}"},
        # sq1: keep the station chunk; sq2: keep the township relation
        {"template": "context_refine", "response": "KEEP: 0"},
        {"template": "context_refine", "response": "KEEP: 2"},
        {"template": "sub_answer", "response": "Winchester"},
        {"template": "sub_answer", "response": "Randolph County"},
        {
            "template": "logic_draft",
            "response": (
                "1. WIZE is licensed in the town of Winchester. [sq1]\n"
                "2. Ward Township sits in Randolph County. [sq2]\n"
                "MISSING: the state that contains Randolph County\n"
                "MISSING: the year Winchester became that state's capital"
            ),
        },
        {
            "template": "evidence_verify",
            "response": (
                "REJECT\n"
                "- nothing ties Randolph County to a state\n"
                "- no date for Winchester becoming a capital"
            ),
        },
        {
            "template": "query_expand",
            "response": f"R: {sq['relational_2']}\nS: {sq['semantic_2']}",
        },
        # sq3: keep the county relation; sq4: keep the capital chunk
        {"template": "context_refine", "response": "KEEP: 2"},
        {"template": "context_refine", "response": "KEEP: 0"},
        {"template": "sub_answer", "response": "Jefferson"},
        {"template": "sub_answer", "response": "1813"},
        {
            "template": "logic_draft",
            "response": (
                "1. WIZE is licensed in the town of Winchester. [sq1]\n"
                "2. Ward Township sits in Randolph County. [sq2]\n"
                "3. Randolph County belongs to the state of Jefferson. [sq3]\n"
                "4. Winchester became Jefferson's capital in 1813. [sq4]"
            ),
        },
        {"template": "evidence_verify", "response": "ACCEPT"},
        {"template": "final_answer", "response": FIXTURE_ANSWER},
    ]


def baseline_transcript() -> list[dict]:
    return [
        {
            "template": "final_answer",
            "response": "The gathered context does not include a date.",
        },
    ]


def reject_transcript() -> list[dict]:
    """A verifier that never accepts, for exercising budget exhaustion."""
    return [
        {"template": "qd_semantic", "response": "1. Which town is WIZE licensed in?"},
        {"template": "qd_relational", "response": "1. Ward Township located in which county"},
        {"template": "context_refine", "response": "KEEP: 0", "repeat": "*"},
        {"template": "sub_answer", "response": "Winchester", "repeat": "*"},
        {
            "template": "logic_draft",
            "response": "1. WIZE is licensed in Winchester. [sq1]\nMISSING: everything else",
            "repeat": "*",
        },
        {
            "template": "evidence_verify",
            "response": "REJECT\n- still unsupported",
            "repeat": "*",
        },
        {
            "template": "query_expand",
            "response": "S: Which town is WIZE licensed in?",
            "repeat": "*",
        },
        {"template": "final_answer", "response": "Winchester, probably."},
    ]


# ----------------------------------------------------------------------
# randomized generators for property tests
# ----------------------------------------------------------------------

_WORDS = (
    "river bridge market harbor castle meadow signal archive garden tunnel "
    "quarry summit lantern orchard mill ferry chapel district province "
    "festival treaty charter railway canal observatory library barracks "
    "foundry granary"
).split()

_NAME_WORDS = (
    "Alder Birch Cedar Dalton Elm Fenwick Grover Hazel Irwin Juniper Kestrel "
    "Linden Maple Norwood Oakes Pembroke Quill Rowan Sycamore Thorne"
).split()


def _sentence(rng: random.Random, n: int) -> str:
    return " ".join(rng.choice(_WORDS) for _ in range(n))


def random_store(
    rng: random.Random,
    max_chunks: int = 8,
    max_entities: int = 12,
    max_relations: int = 16,
) -> GraphKB:
    """A small synthetic store with random texts and random graph shape.
    Entity names may repeat across inserts, exercising the merge path."""
    kb = GraphKB()
    chunk_ids = []
    for i in range(rng.randint(1, max_chunks)):
        cid = kb.add_chunk(
            f"doc{rng.randint(1, 3)}", i, _sentence(rng, rng.randint(4, 14)),
            unit_count=1,
        )
        chunk_ids.append(cid)
    entity_ids = []
    for _ in range(rng.randint(1, max_entities)):
        name = " ".join(
            rng.sample(_NAME_WORDS, rng.randint(1, 2))
        )
        eid = kb.upsert_entity(
            name,
            description=_sentence(rng, rng.randint(0, 8)),
            source_chunk_ids={rng.choice(chunk_ids)},
        )
        entity_ids.append(eid)
    for _ in range(rng.randint(0, max_relations)):
        kb.insert_relation(
            rng.choice(entity_ids),
            rng.choice(entity_ids),
            description=_sentence(rng, rng.randint(1, 8)),
            source_chunk_ids={rng.choice(chunk_ids)},
        )
    return kb


def random_query(rng: random.Random) -> str:
    return _sentence(rng, rng.randint(1, 6))


def random_transcript(rng: random.Random) -> list[dict]:
    """A transcript that keeps any deepsearch run alive regardless of the
    store it meets: every tag has an unbounded tail, and responses are drawn
    from both well-formed and degenerate shapes."""
    decomp = []
    for tag in ("qd_semantic", "qd_relational"):
        n = rng.randint(0, 3)
        lines = "\n".join(f"{i + 1}. {_sentence(rng, rng.randint(1, 5))}" for i in range(n))
        decomp.append({"template": tag, "response": lines})

    keeps = rng.choice([
        "KEEP: 0",
        "KEEP: 0,1,2,3,4,5,6,7",
        "KEEP: none",
        "KEEP: 1,3,99",
        "no verdict here",
    ])
    verify_lines = []
    for _ in range(rng.randint(0, 3)):
        verify_lines.append({
            "template": "evidence_verify",
            "response": rng.choice(["REJECT\n- missing a fact", "ACCEPT", "garbled"]),
        })
    expansions = rng.choice([
        "",
        f"S: {_sentence(rng, 3)}",
        f"R: {_sentence(rng, 3)}\nS: {_sentence(rng, 4)}",
    ])
    return decomp + verify_lines + [
        {"template": "context_refine", "response": keeps, "repeat": "*"},
        {"template": "sub_answer",
         "response": rng.choice(["a short fact", ""]), "repeat": "*"},
        {"template": "logic_draft",
         "response": f"1. {_sentence(rng, 4)} [sq1]\nMISSING: {_sentence(rng, 2)}",
         "repeat": "*"},
        {"template": "evidence_verify", "response": "REJECT\n- never satisfied",
         "repeat": "*"},
        {"template": "query_expand", "response": expansions, "repeat": "*"},
        {"template": "final_answer", "response": _sentence(rng, 3), "repeat": "*"},
    ]


# ----------------------------------------------------------------------
# demo files
# ----------------------------------------------------------------------

def write_demo(out_dir: str | Path) -> dict[str, str]:
    """Write the fixture as CLI-consumable files: corpus, dataset, and
    transcripts for ask/eval runs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}

    corpus_path = out / "corpus.jsonl"
    with open(corpus_path, "w", encoding="utf-8") as fh:
        for doc in FIXTURE_DOCS:
            fh.write(json.dumps(
                {"doc_id": doc.doc_id, "title": doc.title, "body": doc.body},
                ensure_ascii=False,
            ))
            fh.write("\n")
    paths["corpus"] = str(corpus_path)

    dataset_path = out / "dataset.jsonl"
    with open(dataset_path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({
            "question": FIXTURE_QUESTION,
            "golden_answer": FIXTURE_ANSWER,
            "golden_evidence": FIXTURE_GOLDENS,
            "metadata": {"hops": 4},
        }, ensure_ascii=False))
        fh.write("\n")
    paths["dataset"] = str(dataset_path)

    ask_path = out / "transcript.json"
    with open(ask_path, "w", encoding="utf-8") as fh:
        json.dump(deepsearch_transcript(), fh, indent=2, ensure_ascii=False)
        fh.write("\n")
    paths["transcript"] = str(ask_path)

    eval_path = out / "eval_transcript.json"
    with open(eval_path, "w", encoding="utf-8") as fh:
        # one item: the deepsearch script plus a baseline final answer for
        # --compare-baseline
        json.dump(deepsearch_transcript() + baseline_transcript(), fh,
                  indent=2, ensure_ascii=False)
        fh.write("\n")
    paths["eval_transcript"] = str(eval_path)
    return paths


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="python -m graphqa.testkit",
        description="write the demo corpus, dataset, and transcripts",
    )
    parser.add_argument("--out", required=True, help="output directory")
    args = parser.parse_args(argv)
    paths = write_demo(args.out)
    for name, path in sorted(paths.items()):
        print(f"{name}: {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
