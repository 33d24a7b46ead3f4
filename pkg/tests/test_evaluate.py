"""Dataset loading, per-item isolation, scoring, judging, trace curves."""

from __future__ import annotations

import json

import pytest

from graphqa import testkit
from graphqa.errors import InvalidArgumentError
from graphqa.evaluate import (
    EvalItem,
    load_dataset,
    recall_by_step,
    run_eval,
)
from graphqa.llm import ScriptedClient
from graphqa.pipeline import Engine, EngineOptions
from graphqa.trace import Trace


def fixture_item():
    return EvalItem(
        question=testkit.FIXTURE_QUESTION,
        golden_answer=testkit.FIXTURE_ANSWER,
        golden_evidence=list(testkit.FIXTURE_GOLDENS),
    )


def deep_factory(index):
    return ScriptedClient(testkit.deepsearch_transcript())


def eval_transcript():
    return testkit.deepsearch_transcript() + testkit.baseline_transcript()


# ---------------------------------------------------------------------------
# dataset loading
# ---------------------------------------------------------------------------

def write_dataset(path, rows):
    path.write_text(
        "".join(json.dumps(row) + "\n" for row in rows), encoding="utf-8"
    )


def test_load_dataset(tmp_path):
    path = tmp_path / "d.jsonl"
    write_dataset(
        path,
        [
            {"question": "q1", "golden_answer": "a1", "golden_evidence": ["e1"]},
            {"question": "q2", "golden_answer": "a2"},
        ],
    )
    items, digest = load_dataset(path)
    assert len(items) == 2
    assert items[0].golden_evidence == ["e1"]
    assert items[1].golden_evidence == []
    assert len(digest) == 16
    # digest tracks content
    write_dataset(path, [{"question": "q1", "golden_answer": "changed"}])
    _, digest2 = load_dataset(path)
    assert digest2 != digest


def test_load_dataset_skips_blank_lines(tmp_path):
    path = tmp_path / "d.jsonl"
    path.write_text(
        '\n{"question": "q", "golden_answer": "a"}\n\n', encoding="utf-8"
    )
    items, _ = load_dataset(path)
    assert len(items) == 1


@pytest.mark.parametrize(
    "content,needle",
    [
        ("not json\n", "bad dataset row"),
        ('{"golden_answer": "a"}\n', "question"),
        ('{"question": "q"}\n', "golden_answer"),
        ('{"question": "q", "golden_answer": "a", "golden_evidence": "x"}\n', "list"),
        ("", "no items"),
    ],
)
def test_load_dataset_rejects_bad_rows(tmp_path, content, needle):
    path = tmp_path / "d.jsonl"
    path.write_text(content, encoding="utf-8")
    with pytest.raises(InvalidArgumentError, match=needle):
        load_dataset(path)


def test_load_dataset_reports_line_number(tmp_path):
    path = tmp_path / "d.jsonl"
    path.write_text(
        '{"question": "q", "golden_answer": "a"}\n{"question": "q2"}\n',
        encoding="utf-8",
    )
    with pytest.raises(InvalidArgumentError, match=":2"):
        load_dataset(path)


# ---------------------------------------------------------------------------
# run_eval
# ---------------------------------------------------------------------------

def test_run_eval_scores_fixture(fixture_retriever, tmp_path):
    result = run_eval(
        fixture_retriever, EngineOptions(), deep_factory,
        [fixture_item()], "hash123", out_dir=tmp_path,
    )
    assert result.threshold_exceeded is False
    item = result.items[0]
    assert item.error is None
    assert item.sub_em == 1
    assert item.evidence_recall == 1.0
    assert item.recall_by_step == [0.25, 0.5, 0.75, 1.0]
    assert item.verified is True
    assert item.trace_path == "traces/item_0000.jsonl"
    assert (tmp_path / item.trace_path).exists()
    agg = result.aggregate()
    assert agg["subem"] == 100.0
    assert agg["evidence_recall"] == 1.0
    assert agg["dataset_hash"] == "hash123"


def test_run_eval_isolates_item_failures(fixture_retriever):
    def factory(index):
        if index == 1:
            return ScriptedClient([])  # exhausts immediately
        return ScriptedClient(testkit.deepsearch_transcript())

    items = [fixture_item(), fixture_item(), fixture_item()]
    result = run_eval(fixture_retriever, EngineOptions(), factory, items, "h")
    errors = [it.error for it in result.items]
    assert errors[0] is None and errors[2] is None
    assert "FixtureError" in errors[1]
    agg = result.aggregate()
    assert agg["failures"] == 1
    assert agg["subem"] == 100.0  # failed item excluded from scoring
    # 1/3 failures over the default 0.2 threshold
    assert result.threshold_exceeded is True


def test_run_eval_threshold_boundary(fixture_retriever):
    def factory(index):
        if index == 0:
            return ScriptedClient([])
        return ScriptedClient(testkit.deepsearch_transcript())

    items = [fixture_item() for _ in range(4)]
    result = run_eval(
        fixture_retriever, EngineOptions(), factory, items, "h",
        failure_threshold=0.25,
    )
    # failure rate 0.25 does not exceed threshold 0.25
    assert result.threshold_exceeded is False


def test_run_eval_all_failed_aggregate_is_none(fixture_retriever):
    result = run_eval(
        fixture_retriever, EngineOptions(), lambda i: ScriptedClient([]),
        [fixture_item()], "h",
    )
    agg = result.aggregate()
    assert agg["subem"] is None
    assert agg["evidence_recall"] is None
    assert result.threshold_exceeded is True


def test_run_eval_compare_baseline(fixture_retriever, tmp_path):
    result = run_eval(
        fixture_retriever, EngineOptions(),
        lambda i: ScriptedClient(eval_transcript()),
        [fixture_item()], "h", out_dir=tmp_path, compare_baseline=True,
    )
    item = result.items[0]
    assert item.baseline_answer == "The gathered context does not include a date."
    assert item.baseline_sub_em == 0
    assert item.baseline_recall == 0.5
    assert item.baseline_trace_path == "traces/item_0000_baseline.jsonl"
    assert (tmp_path / item.baseline_trace_path).exists()
    agg = result.aggregate()
    assert agg["baseline_subem"] == 0.0
    assert agg["baseline_recall"] == 0.5


def test_run_eval_item_without_goldens(fixture_retriever):
    item = EvalItem(
        question=testkit.FIXTURE_QUESTION,
        golden_answer=testkit.FIXTURE_ANSWER,
        golden_evidence=[],
    )
    result = run_eval(fixture_retriever, EngineOptions(), deep_factory, [item], "h")
    assert result.items[0].error is None
    assert result.items[0].evidence_recall is None
    assert result.items[0].sub_em == 1
    assert result.aggregate()["evidence_recall"] is None


def test_run_eval_judge_scores(fixture_retriever):
    def judge_factory(index):
        return ScriptedClient(
            [
                {"template": "judge_answer", "response": "9,8,10"},
                {"template": "judge_evidence", "response": "7,7,7"},
            ]
        )

    result = run_eval(
        fixture_retriever, EngineOptions(), deep_factory,
        [fixture_item()], "h", judge_factory=judge_factory,
    )
    item = result.items[0]
    assert item.answer_score == 9.0
    assert item.answer_criteria == [9, 8, 10]
    assert item.evidence_score == 7.0
    assert item.evidence_criteria == [7, 7, 7]
    assert item.judge_flags == []
    agg = result.aggregate()
    assert agg["answer_score"] == 9.0
    assert agg["answer_criteria"] == [9.0, 8.0, 10.0]


def test_run_eval_judge_retry_then_give_up(fixture_retriever):
    def judge_factory(index):
        return ScriptedClient(
            [
                # first judge call: unparseable twice, then gives up
                {"template": "judge_answer", "response": "great answer!", "repeat": 2},
                {"template": "judge_evidence", "response": "nonsense"},
                {"template": "judge_evidence", "response": "6,6,6"},
            ]
        )

    result = run_eval(
        fixture_retriever, EngineOptions(), deep_factory,
        [fixture_item()], "h", judge_factory=judge_factory,
    )
    item = result.items[0]
    assert item.answer_score is None
    assert item.answer_criteria is None
    assert "judge_answer_unparseable" in item.judge_flags
    assert item.evidence_score == 6.0  # retry succeeded
    assert result.aggregate()["answer_score"] is None


def test_run_eval_workers_match_sequential(fixture_retriever):
    items = [fixture_item() for _ in range(4)]
    seq = run_eval(fixture_retriever, EngineOptions(), deep_factory, items, "h")
    par = run_eval(
        fixture_retriever, EngineOptions(), deep_factory, items, "h", workers=3,
    )
    assert [it.to_dict() for it in seq.items] == [it.to_dict() for it in par.items]
    assert seq.aggregate() == par.aggregate()


def test_run_eval_rejects_bad_workers(fixture_retriever):
    with pytest.raises(InvalidArgumentError):
        run_eval(fixture_retriever, EngineOptions(), deep_factory,
                 [fixture_item()], "h", workers=0)


# ---------------------------------------------------------------------------
# recall curve from traces
# ---------------------------------------------------------------------------

def test_recall_by_step_from_saved_trace(fixture_retriever, tmp_path):
    eng = Engine(fixture_retriever, ScriptedClient(testkit.deepsearch_transcript()),
                 EngineOptions())
    run = eng.run(testkit.FIXTURE_QUESTION, goldens=testkit.FIXTURE_GOLDENS)
    path = tmp_path / "t.jsonl"
    run.trace.save(path)
    curve = recall_by_step(Trace.load(path), testkit.FIXTURE_GOLDENS)
    assert curve == run.recall_by_step == [0.25, 0.5, 0.75, 1.0]


def test_recall_by_step_requires_goldens():
    with pytest.raises(InvalidArgumentError):
        recall_by_step(Trace(), [])


def test_recall_by_step_empty_trace():
    assert recall_by_step(Trace(), ["a golden fact"]) == []
