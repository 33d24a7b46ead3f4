"""Prompt templates and response grammars.

Every chat call in the system goes through a named template: a system/user
pair with {placeholder} slots. Substitution is literal (no format-spec
machinery), so binding values may safely contain braces. The parsers for the
line-oriented response grammars live here too, next to the templates that
request them.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

from .errors import InvalidArgumentError

logger = logging.getLogger(__name__)

_PLACEHOLDER = re.compile(r"\{([a-z_]+)\}")

TEMPLATES: dict[str, tuple[str, str]] = {
    "qd_semantic": (
        "You decompose complex questions for a document retrieval system. "
        "Respond with a numbered list only.",
        "Break the question below into self-contained factual sub-queries "
        "suitable for passage search. Each sub-query must stand alone. "
        "Return a numbered list, one sub-query per line, nothing else.\n\n"
        "Question: {question}",
    ),
    "qd_relational": (
        "You decompose complex questions for a knowledge graph lookup "
        "system. Respond with a numbered list only.",
        "Break the question below into entity-relation lookups of the form "
        "'subject relation object', one hop each. If a subject is only known "
        "from an earlier lookup's answer, write it as Entity#<n> where <n> "
        "is that lookup's number. Return a numbered list, one lookup per "
        "line, nothing else.\n\nQuestion: {question}",
    ),
    "context_refine": (
        "You filter retrieved context for relevance. Respond with a single "
        "KEEP line.",
        "Sub-query: {sub_query}\n\nCandidates:\n{candidates}\n\n"
        "List the indices of candidates that help answer the sub-query, "
        "most relevant first, as: KEEP: i,j,k",
    ),
    "query_ground": (
        "You rewrite retrieval queries by resolving placeholder references. "
        "Respond with the rewritten query only.",
        "Rewrite the sub-query so it stands alone, replacing every "
        "Entity#<n> placeholder using the answers below. Keep everything "
        "else unchanged.\n\nAnswers so far:\n{history}\n\n"
        "Sub-query: {sub_query}",
    ),
    "sub_answer": (
        "You answer a narrow factual question from the given context only. "
        "Respond with the short answer, nothing else.",
        "Context:\n{context}\n\nQuestion: {sub_query}\n\n"
        "Answer in a few words. If the context is insufficient, answer "
        "UNKNOWN.",
    ),
    "logic_draft": (
        "You draft a reasoning chain from retrieved findings. Use only the "
        "findings given.",
        "Question: {question}\n\nFindings:\n{findings}\n\n"
        "Write the reasoning chain as numbered steps, one per line, each "
        "ending with the supporting finding ids in brackets, e.g. "
        "'1. claim [sq1,sq3]'. If a needed fact is missing from the "
        "findings, add a line 'MISSING: <what is missing>'.",
    ),
    "evidence_verify": (
        "You audit whether evidence fully supports a reasoning chain. "
        "First line of your response must be exactly ACCEPT or REJECT.",
        "Question: {question}\n\nReasoning chain:\n{draft}\n\n"
        "Evidence:\n{evidence}\n\nDoes the evidence fully support every "
        "step, with no gaps? Reply ACCEPT or REJECT on the first line; if "
        "REJECT, list each unsupported step or missing fact on its own "
        "line after it.",
    ),
    "query_expand": (
        "You write follow-up retrieval queries that close evidence gaps. "
        "Respond only with S: and R: lines.",
        "Question: {question}\n\nUnresolved gaps:\n{gaps}\n\n"
        "Write new retrieval queries that would close these gaps, one per "
        "line: prefix passage-search queries with 'S: ' and "
        "entity-relation lookups with 'R: '.",
    ),
    "final_answer": (
        "You answer questions strictly from the given material. Respond "
        "with the answer only, no preamble.",
        "Context:\n{context}\n\nIntermediate answers:\n{answers}\n\n"
        "Reasoning chain:\n{draft}\n\nQuestion: {question}\n\n"
        "Answer concisely using only the material above.",
    ),
    "extract": (
        "You extract entities and relations from text as delimited "
        "records. Respond only with record lines.",
        "Extract the named entities and the relations between them from "
        "the passage below. One record per line:\n"
        "E|<name>|<key=value;...>|<one-sentence description>\n"
        "R|<head name>|<tail name>|<key=value;...>|<one-sentence "
        "description>\nProperty lists may be empty.\n\n"
        "Passage:\n{chunk_text}",
    ),
    "judge_answer": (
        "You grade an answer. Respond with three comma-separated integers "
        "0-10, nothing else.",
        "Question: {question}\nReference answer: {reference}\n"
        "Candidate answer: {answer}\n\n"
        "Score the candidate 0-10 on correctness, logical coherence, and "
        "comprehensiveness. Reply as: x,y,z",
    ),
    "judge_evidence": (
        "You grade retrieved evidence. Respond with three comma-separated "
        "integers 0-10, nothing else.",
        "Question: {question}\nFacts that must be covered:\n{golden}\n\n"
        "Retrieved evidence:\n{evidence}\n\n"
        "Score the evidence 0-10 on relevance, knowledgeability, and "
        "factuality. Reply as: x,y,z",
    ),
}


def render_prompt(template_id: str, bindings: dict[str, str]) -> list[dict[str, str]]:
    """Fill a template's placeholders. Unknown template or missing binding
    raises; unused bindings are ignored."""
    try:
        system, user = TEMPLATES[template_id]
    except KeyError:
        raise InvalidArgumentError(f"unknown template {template_id!r}") from None

    def fill(text: str) -> str:
        def sub(match: re.Match) -> str:
            name = match.group(1)
            if name not in bindings:
                raise InvalidArgumentError(
                    f"template {template_id!r} needs binding {name!r}"
                )
            return str(bindings[name])

        return _PLACEHOLDER.sub(sub, text)

    return [
        {"role": "system", "content": fill(system)},
        {"role": "user", "content": fill(user)},
    ]


# ----------------------------------------------------------------------
# response grammars
# ----------------------------------------------------------------------

_NUMBERED = re.compile(r"^\s*\d+[.)]\s+(.*\S)\s*$")
_BULLETED = re.compile(r"^\s*[-*•]\s+(.*\S)\s*$")


@dataclass
class ListParse:
    items: list[str]
    fallback: bool = False


def parse_list_response(text: str) -> ListParse:
    """Pull items out of a numbered or bulleted list. A non-empty response
    with no list markers degrades to a single item, flagged as fallback."""
    items = []
    for line in text.splitlines():
        match = _NUMBERED.match(line) or _BULLETED.match(line)
        if match:
            items.append(match.group(1))
    if items:
        return ListParse(items=items)
    stripped = text.strip()
    if stripped:
        return ListParse(items=[stripped], fallback=True)
    return ListParse(items=[])


def parse_keep_response(text: str) -> list[int]:
    """Parse 'KEEP: i,j,k'. Raises ValueError when no KEEP line parses."""
    for line in text.splitlines():
        line = line.strip()
        if not line.startswith("KEEP:"):
            continue
        rest = line[len("KEEP:"):].strip()
        if not rest or rest.lower() == "none":
            return []
        indices = []
        for token in rest.split(","):
            token = token.strip()
            if not token:
                continue
            if not token.isdigit():
                raise ValueError(f"bad KEEP index {token!r}")
            indices.append(int(token))
        return indices
    raise ValueError("no KEEP line in response")


def parse_verdict_response(text: str) -> tuple[str, list[str]]:
    """First non-empty line must be exactly ACCEPT or REJECT; the rest are
    reason lines."""
    lines = [line.strip() for line in text.splitlines() if line.strip()]
    if not lines:
        raise ValueError("empty verdict response")
    head, rest = lines[0], lines[1:]
    if head == "ACCEPT":
        return "accept", [line.lstrip("- ") for line in rest]
    if head == "REJECT":
        return "reject", [line.lstrip("- ") for line in rest]
    raise ValueError(f"verdict line must be ACCEPT or REJECT, got {head!r}")


def parse_expansion_response(text: str) -> list[tuple[str, str]]:
    """Parse 'S: <query>' / 'R: <query>' lines into (channel, query) pairs."""
    out = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("S:"):
            query = line[2:].strip()
            channel = "semantic"
        elif line.startswith("R:"):
            query = line[2:].strip()
            channel = "relational"
        else:
            raise ValueError(f"expansion line must start with S: or R:, got {line!r}")
        if not query:
            raise ValueError("expansion line with empty query")
        out.append((channel, query))
    return out


@dataclass
class DraftStep:
    claim: str
    refs: list[str] = field(default_factory=list)


@dataclass
class Draft:
    steps: list[DraftStep] = field(default_factory=list)
    gaps: list[str] = field(default_factory=list)
    raw: str = ""


_DRAFT_REFS = re.compile(r"\[([^\[\]]*)\]\s*$")


def parse_draft_response(text: str) -> Draft:
    """Parse numbered reasoning steps with optional trailing [ref,ref]
    brackets, plus MISSING: gap lines. Unmarked lines are ignored."""
    draft = Draft(raw=text)
    for line in text.splitlines():
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("MISSING:"):
            gap = stripped[len("MISSING:"):].strip()
            if gap:
                draft.gaps.append(gap)
            continue
        match = _NUMBERED.match(stripped)
        if not match:
            continue
        body = match.group(1)
        refs: list[str] = []
        ref_match = _DRAFT_REFS.search(body)
        if ref_match:
            refs = [r.strip() for r in ref_match.group(1).split(",") if r.strip()]
            body = body[: ref_match.start()].rstrip()
        draft.steps.append(DraftStep(claim=body, refs=refs))
    return draft
