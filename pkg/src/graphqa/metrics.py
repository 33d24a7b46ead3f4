"""Scoring primitives: answer containment, evidence recall, judge parsing.

Everything here is a pure function so the evaluation layer and tests can
call them without touching retrieval or model clients.
"""

from __future__ import annotations

import logging
import string

from .errors import InvalidArgumentError

logger = logging.getLogger(__name__)

_STRIP_CHARS = string.punctuation + string.whitespace


def normalize_answer(text: str) -> str:
    """Casefold, collapse internal whitespace, strip surrounding punctuation."""
    collapsed = " ".join(text.casefold().split())
    return collapsed.strip(_STRIP_CHARS)


def sub_em(prediction: str, gold: str) -> int:
    """1 when the normalized gold answer appears inside the normalized
    prediction. An empty gold never matches: containment of nothing is
    vacuous, not correct."""
    gold_norm = normalize_answer(gold)
    if not gold_norm:
        return 0
    return int(gold_norm in normalize_answer(prediction))


def aggregate_subem(scores: list[int]) -> float:
    """Mean of 0/1 scores as a percentage with two decimals. An empty list
    has no mean; refusing it beats silently reporting 0."""
    if not scores:
        raise InvalidArgumentError("aggregate_subem needs at least one score")
    return round(sum(scores) / len(scores) * 100, 2)


def evidence_recall(goldens: list[str], haystacks: list[str]) -> float:
    """Fraction of golden facts present (normalized substring) in any of the
    haystack texts."""
    if not goldens:
        raise InvalidArgumentError("evidence_recall needs at least one golden fact")
    matched = matched_goldens(goldens, haystacks)
    return len(matched) / len(goldens)


def matched_goldens(goldens: list[str], haystacks: list[str]) -> list[int]:
    """Indices of golden facts found in at least one haystack."""
    norm_haystacks = [normalize_answer(h) for h in haystacks]
    out = []
    for i, golden in enumerate(goldens):
        needle = normalize_answer(golden)
        if not needle:
            continue
        if any(needle in hay for hay in norm_haystacks):
            out.append(i)
    return out


def parse_judge_scores(text: str) -> tuple[float, list[int]]:
    """Parse 'x,y,z' (three integers 0-10) into (mean, per-criterion values).
    Raises ValueError on any deviation."""
    first = ""
    for line in text.splitlines():
        if line.strip():
            first = line.strip()
            break
    parts = [p.strip() for p in first.split(",")]
    if len(parts) != 3:
        raise ValueError(f"judge response needs three scores, got {first!r}")
    values = []
    for part in parts:
        if not part.lstrip("-").isdigit():
            raise ValueError(f"judge score {part!r} is not an integer")
        value = int(part)
        if not 0 <= value <= 10:
            raise ValueError(f"judge score {value} outside 0-10")
        values.append(value)
    return round(sum(values) / 3, 2), values
