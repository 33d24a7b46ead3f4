"""Benchmark evaluation: run the engine over a dataset and score it.

Items run independently; a failure on one item is recorded and the run
continues. The run is only considered failed as a whole when the failure
rate crosses the configured threshold. Answers score by containment
(sub_em), evidence by golden-fact recall over the final pool, and optionally
by a judge model grading answer and evidence quality on three criteria each.
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InvalidArgumentError
from .metrics import (
    aggregate_subem,
    evidence_recall,
    parse_judge_scores,
    sub_em,
)
from .pipeline import MODE_BASELINE, Engine, EngineOptions, RunResult
from .prompts import render_prompt
from .retrieval import Retriever
from .trace import Trace

logger = logging.getLogger(__name__)


@dataclass
class EvalItem:
    question: str
    golden_answer: str
    golden_evidence: list[str]
    metadata: dict = field(default_factory=dict)


@dataclass
class ItemResult:
    index: int
    question: str
    answer: str = ""
    sub_em: int = 0
    evidence_recall: float | None = None
    recall_by_step: list[float] = field(default_factory=list)
    verified: bool | None = None
    flags: list[str] = field(default_factory=list)
    llm_calls: int = 0
    retrieval_calls: int = 0
    answer_score: float | None = None
    answer_criteria: list[int] | None = None
    evidence_score: float | None = None
    evidence_criteria: list[int] | None = None
    judge_flags: list[str] = field(default_factory=list)
    trace_path: str = ""
    baseline_answer: str | None = None
    baseline_sub_em: int | None = None
    baseline_recall: float | None = None
    baseline_trace_path: str = ""
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "question": self.question,
            "answer": self.answer,
            "sub_em": self.sub_em,
            "evidence_recall": self.evidence_recall,
            "recall_by_step": self.recall_by_step,
            "verified": self.verified,
            "flags": self.flags,
            "llm_calls": self.llm_calls,
            "retrieval_calls": self.retrieval_calls,
            "answer_score": self.answer_score,
            "answer_criteria": self.answer_criteria,
            "evidence_score": self.evidence_score,
            "evidence_criteria": self.evidence_criteria,
            "judge_flags": self.judge_flags,
            "trace_path": self.trace_path,
            "baseline_answer": self.baseline_answer,
            "baseline_sub_em": self.baseline_sub_em,
            "baseline_recall": self.baseline_recall,
            "baseline_trace_path": self.baseline_trace_path,
            "error": self.error,
        }


@dataclass
class EvalResult:
    items: list[ItemResult]
    dataset_hash: str
    mode: str
    options: dict
    compare_baseline: bool = False
    threshold_exceeded: bool = False

    @property
    def scored_items(self) -> list[ItemResult]:
        return [it for it in self.items if it.error is None]

    def aggregate(self) -> dict:
        scored = self.scored_items
        failures = len(self.items) - len(scored)
        subem_scores = [it.sub_em for it in scored]
        out = {
            "items": len(self.items),
            "failures": failures,
            "failure_rate": failures / len(self.items) if self.items else 0.0,
            "subem": aggregate_subem(subem_scores) if subem_scores else None,
            "evidence_recall": _mean(
                [it.evidence_recall for it in scored if it.evidence_recall is not None]
            ),
            "answer_score": _mean(
                [it.answer_score for it in scored if it.answer_score is not None]
            ),
            "answer_criteria": _mean_columns(
                [it.answer_criteria for it in scored if it.answer_criteria is not None]
            ),
            "evidence_score": _mean(
                [it.evidence_score for it in scored if it.evidence_score is not None]
            ),
            "evidence_criteria": _mean_columns(
                [it.evidence_criteria for it in scored if it.evidence_criteria is not None]
            ),
            "dataset_hash": self.dataset_hash,
            "mode": self.mode,
            "options": self.options,
        }
        if self.compare_baseline:
            base_scores = [
                it.baseline_sub_em for it in scored if it.baseline_sub_em is not None
            ]
            out["baseline_subem"] = aggregate_subem(base_scores) if base_scores else None
            out["baseline_recall"] = _mean(
                [it.baseline_recall for it in scored if it.baseline_recall is not None]
            )
        return out


def _mean(values: list[float]) -> float | None:
    if not values:
        return None
    return round(sum(values) / len(values), 4)


def _mean_columns(rows: list[list[int]]) -> list[float] | None:
    if not rows:
        return None
    width = len(rows[0])
    return [
        round(sum(row[i] for row in rows) / len(rows), 2) for i in range(width)
    ]


def load_dataset(path: str | Path) -> tuple[list[EvalItem], str]:
    """Read a JSONL dataset and return the items plus a content digest."""
    path = Path(path)
    raw = path.read_bytes()
    digest = hashlib.sha256(raw).hexdigest()[:16]
    items = []
    for lineno, line in enumerate(raw.decode("utf-8").splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise InvalidArgumentError(f"bad dataset row at {path}:{lineno}: {exc}") from exc
        question = row.get("question")
        answer = row.get("golden_answer")
        if not question or answer is None:
            raise InvalidArgumentError(
                f"dataset row at {path}:{lineno} needs question and golden_answer"
            )
        evidence = row.get("golden_evidence", [])
        if not isinstance(evidence, list):
            raise InvalidArgumentError(
                f"dataset row at {path}:{lineno}: golden_evidence must be a list"
            )
        items.append(
            EvalItem(
                question=question,
                golden_answer=answer,
                golden_evidence=[str(e) for e in evidence],
                metadata=row.get("metadata", {}),
            )
        )
    if not items:
        raise InvalidArgumentError(f"dataset {path} has no items")
    return items, digest


def recall_by_step(trace: Trace, goldens: list[str]) -> list[float]:
    """Recompute the evidence-recall curve from a run trace alone. Each
    evidence event carries the texts of its refined items and the merged
    pool snapshot, so no store access is needed."""
    if not goldens:
        raise InvalidArgumentError("recall_by_step needs at least one golden fact")
    texts: dict[tuple[str, str], str] = {}
    curve = []
    for event in trace.of("evidence"):
        for kind, item_id, _score, text in event["items"]:
            texts[(kind, item_id)] = text
        merged = event["merged"]
        pool_texts = [
            texts[(table[:-1], item_id)]
            for table in ("chunks", "entities", "relations")
            for item_id in merged[table]
        ]
        curve.append(evidence_recall(goldens, pool_texts))
    return curve


def run_eval(
    retriever: Retriever,
    options: EngineOptions,
    client_factory,
    dataset: list[EvalItem],
    dataset_hash: str,
    out_dir: str | Path | None = None,
    mode: str = "deepsearch",
    judge_factory=None,
    compare_baseline: bool = False,
    failure_threshold: float = 0.2,
    workers: int = 1,
) -> EvalResult:
    """Run every item through the engine. client_factory(index) supplies the
    chat client for one item (both its runs, when comparing baseline).
    workers > 1 runs items concurrently; each item gets its own client and
    engine, and the shared retriever is only read."""
    if workers < 1:
        raise InvalidArgumentError("workers must be >= 1")
    out_path = Path(out_dir) if out_dir is not None else None
    trace_dir = None
    if out_path is not None:
        trace_dir = out_path / "traces"
        trace_dir.mkdir(parents=True, exist_ok=True)

    def eval_item(pair: tuple[int, EvalItem]) -> ItemResult:
        index, item = pair
        result = ItemResult(index=index, question=item.question)
        try:
            client = client_factory(index)
            engine = Engine(retriever, client, options)
            run = engine.run(item.question, mode=mode, goldens=item.golden_evidence)
            _score_run(result, run, item)
            if trace_dir is not None:
                path = trace_dir / f"item_{index:04d}.jsonl"
                run.trace.save(path)
                result.trace_path = str(path.relative_to(out_path))
            if compare_baseline:
                base = engine.run(item.question, mode=MODE_BASELINE,
                                  goldens=item.golden_evidence)
                result.baseline_answer = base.answer
                result.baseline_sub_em = sub_em(base.answer, item.golden_answer)
                if item.golden_evidence:
                    result.baseline_recall = evidence_recall(
                        item.golden_evidence, base.pool_texts
                    )
                if trace_dir is not None:
                    path = trace_dir / f"item_{index:04d}_baseline.jsonl"
                    base.trace.save(path)
                    result.baseline_trace_path = str(path.relative_to(out_path))
            if judge_factory is not None:
                judge = judge_factory(index)
                _judge_item(result, run, item, judge)
        except Exception as exc:  # noqa: BLE001 - per-item isolation is the point
            logger.exception("item %d failed", index)
            result.error = f"{type(exc).__name__}: {exc}"
        return result

    pairs = list(enumerate(dataset))
    if workers == 1:
        results = [eval_item(pair) for pair in pairs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(eval_item, pairs))

    failures = sum(1 for r in results if r.error is not None)
    failure_rate = failures / len(results) if results else 0.0
    return EvalResult(
        items=results,
        dataset_hash=dataset_hash,
        mode=mode,
        options=options.snapshot(),
        compare_baseline=compare_baseline,
        threshold_exceeded=failure_rate > failure_threshold,
    )


def _score_run(result: ItemResult, run: RunResult, item: EvalItem) -> None:
    result.answer = run.answer
    result.sub_em = sub_em(run.answer, item.golden_answer)
    if item.golden_evidence:
        result.evidence_recall = evidence_recall(item.golden_evidence, run.pool_texts)
    result.recall_by_step = run.recall_by_step
    result.verified = run.verified
    result.flags = run.flags
    result.llm_calls = run.llm_calls
    result.retrieval_calls = run.retrieval_calls


def _judge_item(result: ItemResult, run: RunResult, item: EvalItem, judge) -> None:
    evidence_text = "\n".join(
        f"- {text}" for text in run.pool_texts[:50] if text
    ) or "(no evidence retrieved)"
    result.answer_score, result.answer_criteria = _judge_call(
        judge, "judge_answer",
        {
            "question": item.question,
            "reference": item.golden_answer,
            "answer": run.answer,
        },
        result.judge_flags,
    )
    result.evidence_score, result.evidence_criteria = _judge_call(
        judge, "judge_evidence",
        {
            "question": item.question,
            "golden": "\n".join(f"- {g}" for g in item.golden_evidence) or "(none)",
            "evidence": evidence_text,
        },
        result.judge_flags,
    )


def _judge_call(
    judge, template: str, bindings: dict, flags: list[str],
) -> tuple[float | None, list[int] | None]:
    """One judged score: a retry on an unparseable response, then give up."""
    messages = render_prompt(template, bindings)
    for attempt in range(2):
        response = judge.complete(messages, tag=template)
        try:
            return parse_judge_scores(response)
        except ValueError as exc:
            logger.warning("%s response unparseable (attempt %d): %s",
                           template, attempt + 1, exc)
    flags.append(f"{template}_unparseable")
    return None, None
