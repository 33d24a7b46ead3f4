"""Evaluation report files.

One eval run writes, side by side in the output directory: report.jsonl
(one row per item), summary.json (aggregates), report.txt (aligned table),
and PNG figures for the evidence-recall trajectory and the answer-score
comparison.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .evaluate import EvalResult

logger = logging.getLogger(__name__)


def write_report(result: EvalResult, out_dir: str | Path) -> dict[str, str]:
    """Write all report files; returns a name -> path map."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}

    report_path = out / "report.jsonl"
    with open(report_path, "w", encoding="utf-8") as fh:
        for item in result.items:
            fh.write(json.dumps(item.to_dict(), sort_keys=True, ensure_ascii=False))
            fh.write("\n")
    paths["report"] = str(report_path)

    summary_path = out / "summary.json"
    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump(result.aggregate(), fh, indent=2, sort_keys=True, ensure_ascii=False)
        fh.write("\n")
    paths["summary"] = str(summary_path)

    table_path = out / "report.txt"
    table_path.write_text(render_table(result), encoding="utf-8")
    paths["table"] = str(table_path)

    recall_path = out / "recall_by_step.png"
    _plot_recall(result, recall_path)
    paths["recall_figure"] = str(recall_path)

    subem_path = out / "subem.png"
    _plot_subem(result, subem_path)
    paths["subem_figure"] = str(subem_path)
    return paths


def render_table(result: EvalResult) -> str:
    header = f"{'Idx':>4}  {'SubEM':>5}  {'Recall':>6}  {'A-Score':>7}  {'E-Score':>7}  {'Verified':>8}  Status"
    lines = [header, "-" * len(header)]
    for item in result.items:
        if item.error is not None:
            lines.append(
                f"{item.index:>4}  {'-':>5}  {'-':>6}  {'-':>7}  {'-':>7}  "
                f"{'-':>8}  ERROR: {item.error}"
            )
            continue
        verified = {True: "yes", False: "no", None: "off"}[item.verified]
        lines.append(
            f"{item.index:>4}  {item.sub_em:>5}  {_fmt(item.evidence_recall):>6}  "
            f"{_fmt(item.answer_score):>7}  {_fmt(item.evidence_score):>7}  "
            f"{verified:>8}  ok"
        )
    agg = result.aggregate()
    lines.append("-" * len(header))
    lines.append(
        f"items={agg['items']} failures={agg['failures']} "
        f"SubEM={_fmt(agg['subem'])} recall={_fmt(agg['evidence_recall'])} "
        f"A-Score={_fmt(agg['answer_score'])} E-Score={_fmt(agg['evidence_score'])}"
    )
    if result.compare_baseline:
        lines.append(
            f"baseline: SubEM={_fmt(agg['baseline_subem'])} "
            f"recall={_fmt(agg['baseline_recall'])}"
        )
    lines.append(f"dataset={agg['dataset_hash']} mode={agg['mode']}")
    return "\n".join(lines) + "\n"


def _fmt(value: float | None) -> str:
    return "-" if value is None else f"{value:.2f}"


def mean_recall_curve(result: EvalResult) -> list[float]:
    """Average the per-item recall trajectories, padding shorter ones with
    their final value so every position averages over all items."""
    curves = [it.recall_by_step for it in result.scored_items if it.recall_by_step]
    if not curves:
        return []
    width = max(len(c) for c in curves)
    padded = [c + [c[-1]] * (width - len(c)) for c in curves]
    return [
        round(sum(c[i] for c in padded) / len(padded), 4) for i in range(width)
    ]


def _plot_recall(result: EvalResult, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    curve = mean_recall_curve(result)
    if curve:
        steps = list(range(1, len(curve) + 1))
        ax.plot(steps, curve, marker="o", label="deepsearch")
        ax.set_xticks(steps)
    if result.compare_baseline:
        baseline = [
            it.baseline_recall for it in result.scored_items
            if it.baseline_recall is not None
        ]
        if baseline:
            ax.axhline(
                sum(baseline) / len(baseline), color="gray", linestyle="--",
                label="baseline",
            )
    ax.set_xlabel("retrieval step")
    ax.set_ylabel("evidence recall")
    ax.set_ylim(-0.05, 1.05)
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _plot_subem(result: EvalResult, path: Path) -> None:
    agg = result.aggregate()
    pairs = [(result.mode, agg["subem"])]
    if result.compare_baseline:
        pairs.append(("baseline", agg["baseline_subem"]))
    pairs = [(label, value) for label, value in pairs if value is not None]
    labels = [label for label, _ in pairs]
    values = [value for _, value in pairs]
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.bar(labels, values, color=["#2a6fba", "#999999"][: len(values)])
    for i, value in enumerate(values):
        ax.text(i, value, f"{value:.1f}", ha="center", va="bottom")
    ax.set_ylabel("SubEM (%)")
    ax.set_ylim(0, 105)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
