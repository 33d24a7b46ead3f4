"""Answer containment, evidence recall, and judge score parsing."""

from __future__ import annotations

import pytest

from graphqa.errors import InvalidArgumentError
from graphqa.metrics import (
    aggregate_subem,
    evidence_recall,
    matched_goldens,
    normalize_answer,
    parse_judge_scores,
    sub_em,
)


@pytest.mark.parametrize(
    "raw,expected",
    [
        ("1813", "1813"),
        ("  The Year  1813. ", "the year 1813"),
        ("WINCHESTER", "winchester"),
        ("Winchester,\tcapital\nof Jefferson", "winchester, capital of jefferson"),
        ("...!!!", ""),
        ("", ""),
        ('"quoted"', "quoted"),
    ],
)
def test_normalize_answer(raw, expected):
    assert normalize_answer(raw) == expected


def test_sub_em_containment():
    assert sub_em("It became the capital in 1813.", "1813") == 1
    assert sub_em("1813", "1813") == 1
    assert sub_em("the capital moved in 1814", "1813") == 0


def test_sub_em_case_and_punctuation_insensitive():
    assert sub_em("WINCHESTER, obviously", "winchester") == 1
    assert sub_em("the answer is: Randolph County.", "Randolph  County") == 1


def test_sub_em_empty_cases():
    assert sub_em("anything", "") == 0
    assert sub_em("anything", " .,! ") == 0
    assert sub_em("", "1813") == 0


def test_sub_em_partial_word_still_substring():
    # containment is substring-level by design
    assert sub_em("Winchesterville", "Winchester") == 1


def test_aggregate_subem():
    assert aggregate_subem([1, 0, 0]) == 33.33
    assert aggregate_subem([1, 1, 1, 1]) == 100.0
    assert aggregate_subem([0]) == 0.0
    assert aggregate_subem([1, 1, 0]) == 66.67


def test_aggregate_subem_empty_raises():
    with pytest.raises(InvalidArgumentError):
        aggregate_subem([])


def test_evidence_recall():
    goldens = ["WIZE is licensed in Winchester", "Winchester became the capital"]
    hay = ["wize is licensed in winchester, a river town"]
    assert evidence_recall(goldens, hay) == 0.5
    assert evidence_recall(goldens, []) == 0.0
    assert evidence_recall(goldens, hay + ["winchester became the capital in 1813"]) == 1.0


def test_evidence_recall_empty_goldens_raises():
    with pytest.raises(InvalidArgumentError):
        evidence_recall([], ["some text"])


def test_matched_goldens_indices():
    goldens = ["alpha fact", "beta fact", "", "gamma fact"]
    hay = ["contains Beta Fact here", "and GAMMA fact too"]
    assert matched_goldens(goldens, hay) == [1, 3]
    assert matched_goldens(goldens, []) == []


def test_parse_judge_scores():
    assert parse_judge_scores("8,7,9") == (8.0, [8, 7, 9])
    mean, values = parse_judge_scores("  10 , 0 , 5  ")
    assert mean == 5.0
    assert values == [10, 0, 5]
    assert parse_judge_scores("\n\n7,7,8\nextra commentary") == (7.33, [7, 7, 8])


def test_parse_judge_scores_errors():
    with pytest.raises(ValueError, match="three scores"):
        parse_judge_scores("8,9")
    with pytest.raises(ValueError, match="three scores"):
        parse_judge_scores("")
    with pytest.raises(ValueError, match="not an integer"):
        parse_judge_scores("8,nine,9")
    with pytest.raises(ValueError, match="outside"):
        parse_judge_scores("8,11,9")
    with pytest.raises(ValueError, match="outside"):
        parse_judge_scores("-1,5,5")
