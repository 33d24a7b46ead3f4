"""The agentic question-answering engine.

A deepsearch run decomposes the question into channel-tagged sub-queries,
processes each one (ground, retrieve, refine, answer), accumulating
evidence records in an append-only pool whose merged context only ever
grows. It then drafts a reasoning chain and has it verified against the
pool. A rejected draft triggers query expansion: new sub-queries are
processed and the draft/verify cycle repeats, up to max_rounds expansion
rounds. When the budget runs out with the draft still rejected, the engine
answers anyway and marks the run unverified.

Baseline mode skips all of that: one hybrid retrieval for the raw question,
then the answer prompt.

Every step appends to an in-memory trace with logical sequence numbers and
no timestamps, so identical inputs yield identical trace bytes.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

from .errors import ConfigError, InvalidArgumentError
from .llm import prompt_digest
from .metrics import evidence_recall
from .prompts import (
    Draft,
    DraftStep,
    parse_draft_response,
    parse_expansion_response,
    parse_keep_response,
    parse_list_response,
    parse_verdict_response,
    render_prompt,
)
from .retrieval import (
    CHANNEL_HYBRID,
    CHANNEL_RELATIONAL,
    CHANNEL_SEMANTIC,
    RetrievedContext,
    Retriever,
    merge_contexts,
)
from .trace import Trace

logger = logging.getLogger(__name__)

MODE_BASELINE = "baseline"
MODE_DEEPSEARCH = "deepsearch"
MODES = (MODE_BASELINE, MODE_DEEPSEARCH)

ROUTE_DUAL = "dual"
ROUTES = (ROUTE_DUAL, CHANNEL_SEMANTIC, CHANNEL_RELATIONAL, CHANNEL_HYBRID)

STATUS_PENDING = "pending"
STATUS_GROUNDED = "grounded"
STATUS_ANSWERED = "answered"

# Matches Entity#2 and the bare #2 shorthand referencing an earlier
# sub-query's answer.
PLACEHOLDER = re.compile(r"(?:Entity)?#\d+")

_CLIP = 400


def find_placeholders(text: str) -> list[str]:
    return PLACEHOLDER.findall(text)


@dataclass
class EngineOptions:
    """Module toggles and budgets. Stages can be ablated independently
    except where one consumes another's output."""

    qd: bool = True
    cr: bool = True
    qg: bool = True
    ld: bool = True
    ev: bool = True
    qe: bool = True
    max_rounds: int = 2
    max_subqueries: int = 6
    max_expansions: int = 3
    refine_fallback_k: int = 5
    routing: str = ROUTE_DUAL

    def validate(self) -> None:
        if self.qe and not self.ev:
            raise ConfigError("query expansion requires evidence verification")
        if self.ev and not self.ld:
            raise ConfigError("evidence verification requires logic drafting")
        if self.qg and not self.qd:
            raise ConfigError("query grounding requires query decomposition")
        if self.max_rounds < 0:
            raise ConfigError("max_rounds must be >= 0")
        if self.max_subqueries < 1:
            raise ConfigError("max_subqueries must be >= 1")
        if self.max_expansions < 1:
            raise ConfigError("max_expansions must be >= 1")
        if self.refine_fallback_k < 1:
            raise ConfigError("refine_fallback_k must be >= 1")
        if self.routing not in ROUTES:
            raise ConfigError(f"unknown routing {self.routing!r}")

    def snapshot(self) -> dict:
        return {
            "qd": self.qd, "cr": self.cr, "qg": self.qg,
            "ld": self.ld, "ev": self.ev, "qe": self.qe,
            "max_rounds": self.max_rounds,
            "max_subqueries": self.max_subqueries,
            "max_expansions": self.max_expansions,
            "routing": self.routing,
        }


@dataclass
class SubQuery:
    sq_id: str
    text: str
    channel: str
    origin: str
    placeholders: list[str] = field(default_factory=list)
    status: str = STATUS_PENDING
    grounded_text: str = ""
    answer: str | None = None


@dataclass
class EvidenceRecord:
    sub_query: SubQuery
    raw_context: RetrievedContext
    refined_context: RetrievedContext
    intermediate_answer: str | None = None


@dataclass
class EvidencePool:
    """Append-only accumulation of per-sub-query evidence; merged_context is
    the running union of every refined context."""

    records: list[EvidenceRecord] = field(default_factory=list)
    merged_context: RetrievedContext = field(default_factory=RetrievedContext)

    def append(self, record: EvidenceRecord) -> None:
        self.records.append(record)
        self.merged_context = merge_contexts(self.merged_context, record.refined_context)


@dataclass
class RunResult:
    question: str
    mode: str
    answer: str
    verified: bool | None
    flags: list[str]
    sub_queries: list[SubQuery]
    pool: EvidencePool
    pool_texts: list[str]
    llm_calls: int
    retrieval_calls: int
    rounds_used: int
    recall_by_step: list[float]
    trace: Trace


def _clip(text: str, limit: int = _CLIP) -> str:
    text = " ".join(text.split())
    if len(text) > limit:
        return text[: limit - 3] + "..."
    return text


class Engine:
    """Binds a retriever and a chat client into the answer workflow."""

    def __init__(self, retriever: Retriever, client,
                 options: EngineOptions | None = None):
        self.retriever = retriever
        self.client = client
        self.options = options or EngineOptions()
        self.options.validate()

    def run(
        self,
        question: str,
        mode: str = MODE_DEEPSEARCH,
        goldens: list[str] | None = None,
    ) -> RunResult:
        if not question or not question.strip():
            raise InvalidArgumentError("question is empty")
        if mode not in MODES:
            raise InvalidArgumentError(f"unknown mode {mode!r}")
        state = _Run(question=question.strip(), mode=mode, goldens=goldens or None)
        state.trace.emit(
            "run_start", question=state.question, mode=mode,
            options=self.options.snapshot(),
        )
        try:
            if mode == MODE_BASELINE:
                self._run_baseline(state)
            else:
                self._run_deepsearch(state)
        except Exception as exc:
            state.trace.emit("error", error=f"{type(exc).__name__}: {exc}")
            exc.partial_trace = state.trace
            raise
        state.trace.emit(
            "run_end",
            answer=state.answer,
            verified=state.verified,
            flags=sorted(set(state.flags)),
            llm_calls=state.llm_calls,
            retrieval_calls=state.retrieval_calls,
            rounds_used=state.rounds_used,
            pool_records=len(state.pool.records),
            merged_total=state.pool.merged_context.total(),
            recall_by_step=state.recall_by_step,
        )
        return RunResult(
            question=state.question,
            mode=mode,
            answer=state.answer,
            verified=state.verified,
            flags=sorted(set(state.flags)),
            sub_queries=state.sub_queries,
            pool=state.pool,
            pool_texts=self._pool_evidence_texts(state),
            llm_calls=state.llm_calls,
            retrieval_calls=state.retrieval_calls,
            rounds_used=state.rounds_used,
            recall_by_step=state.recall_by_step,
            trace=state.trace,
        )

    # ------------------------------------------------------------------
    # modes
    # ------------------------------------------------------------------

    def _run_baseline(self, state: _Run) -> None:
        sq = self._new_subquery(state, state.question, CHANNEL_HYBRID, "baseline")
        sq.grounded_text = sq.text
        sq.status = STATUS_GROUNDED
        raw = self._retrieve(state, sq)
        record = EvidenceRecord(sub_query=sq, raw_context=raw, refined_context=raw)
        self._append_record(state, record)
        state.verified = None
        state.answer = self._final_answer(state, draft=None)

    def _run_deepsearch(self, state: _Run) -> None:
        opts = self.options
        for sq in self._decompose(state):
            self._process_subquery(state, sq)

        draft = None
        if opts.ld and not state.pool.records:
            state.flags.append("empty_pool")
        elif opts.ld:
            round_no = 0
            while True:
                draft = self._draft(state)
                if not opts.ev:
                    break
                verdict, reasons = self._verify(state, draft)
                if verdict == "accept":
                    state.verified = True
                    break
                if not (opts.qe and round_no < opts.max_rounds):
                    state.verified = False
                    state.flags.append("unverified")
                    break
                round_no += 1
                state.rounds_used = round_no
                new_sqs = self._expand(state, draft, reasons, round_no)
                if not new_sqs:
                    state.verified = False
                    state.flags.extend(["unverified", "expansion_empty"])
                    break
                for sq in new_sqs:
                    self._process_subquery(state, sq)

        state.answer = self._final_answer(state, draft)

    # ------------------------------------------------------------------
    # stages
    # ------------------------------------------------------------------

    def _new_subquery(self, state: _Run, text: str, channel: str,
                      origin: str) -> SubQuery:
        sq = SubQuery(
            sq_id=f"sq{len(state.sub_queries) + 1}",
            text=text,
            channel=channel,
            origin=origin,
            placeholders=find_placeholders(text),
        )
        state.sub_queries.append(sq)
        state.trace.emit(
            "subquery", sq_id=sq.sq_id, origin=sq.origin, channel=sq.channel,
            text=sq.text, placeholders=sq.placeholders,
        )
        return sq

    def _decompose(self, state: _Run) -> list[SubQuery]:
        opts = self.options
        if not opts.qd:
            sq = self._new_subquery(state, state.question, CHANNEL_HYBRID, "question")
            return [sq]

        semantic = self._list_call(state, "qd_semantic")
        relational = self._list_call(state, "qd_relational")
        if len(semantic) > opts.max_subqueries:
            semantic = semantic[: opts.max_subqueries]
            state.flags.append("semantic_subqueries_truncated")
        if len(relational) > opts.max_subqueries:
            relational = relational[: opts.max_subqueries]
            state.flags.append("relational_subqueries_truncated")
        state.trace.emit("decompose", semantic=semantic, relational=relational)

        if not semantic and not relational:
            state.flags.append("decomposition_empty")
            return [self._new_subquery(state, state.question, CHANNEL_HYBRID,
                                       "question")]

        out = []
        for i in range(max(len(semantic), len(relational))):
            if i < len(semantic):
                out.append(self._route(state, semantic[i], CHANNEL_SEMANTIC,
                                       "decomposition"))
            if i < len(relational):
                out.append(self._route(state, relational[i], CHANNEL_RELATIONAL,
                                       "decomposition"))
        return out

    def _route(self, state: _Run, text: str, channel: str, origin: str) -> SubQuery:
        if self.options.routing != ROUTE_DUAL:
            channel = self.options.routing
        return self._new_subquery(state, text, channel, origin)

    def _list_call(self, state: _Run, template: str) -> list[str]:
        response = self._call(state, template, {"question": state.question})
        parsed = parse_list_response(response)
        if parsed.fallback:
            state.flags.append(f"{template}_fallback")
        return parsed.items

    def _process_subquery(self, state: _Run, sq: SubQuery) -> None:
        self._ground(state, sq)
        raw = self._retrieve(state, sq)
        refined = self._refine(state, sq, raw)
        answer = self._answer_subquery(state, sq, refined)
        record = EvidenceRecord(sub_query=sq, raw_context=raw,
                                refined_context=refined,
                                intermediate_answer=answer)
        self._append_record(state, record)

    def _ground(self, state: _Run, sq: SubQuery) -> None:
        opts = self.options
        if not opts.qg:
            sq.grounded_text = sq.text
            sq.status = STATUS_GROUNDED
            return
        history = state.answer_history()
        if not sq.placeholders or not history:
            sq.grounded_text = sq.text
            sq.status = STATUS_GROUNDED
            state.trace.emit("ground", sq_id=sq.sq_id, original=sq.text,
                             grounded=sq.text, passthrough=True)
            return
        bindings = {"sub_query": sq.text, "history": "\n".join(history)}
        grounded = ""
        # unresolved markers after the first call get one retry
        for _ in range(2):
            response = self._call(state, "query_ground", bindings)
            grounded = response.strip().splitlines()[0].strip() if response.strip() else ""
            if grounded and not find_placeholders(grounded):
                break
        if not grounded:
            grounded = sq.text
            state.flags.append("grounding_empty")
        left = find_placeholders(grounded)
        if left:
            state.flags.append("grounding_incomplete")
        sq.grounded_text = grounded
        sq.placeholders = left
        sq.status = STATUS_GROUNDED
        state.trace.emit("ground", sq_id=sq.sq_id, original=sq.text,
                         grounded=grounded, passthrough=False,
                         unresolved=left)

    def _retrieve(self, state: _Run, sq: SubQuery) -> RetrievedContext:
        query = sq.grounded_text or sq.text
        context = self.retriever.retrieve(query, sq.channel)
        state.retrieval_calls += 1
        state.trace.emit(
            "retrieve", sq_id=sq.sq_id, channel=sq.channel, query=query,
            chunks=[[it.item_id, it.score] for it in context.chunks],
            entities=[[it.item_id, it.score] for it in context.entities],
            relations=[[it.item_id, it.score] for it in context.relations],
        )
        return context

    def _refine(self, state: _Run, sq: SubQuery,
                raw: RetrievedContext) -> RetrievedContext:
        if not self.options.cr or raw.is_empty():
            return raw
        # stable index space: chunks, then entities, then relations
        indexed = (
            [("chunks", it) for it in raw.chunks]
            + [("entities", it) for it in raw.entities]
            + [("relations", it) for it in raw.relations]
        )
        candidates = "\n".join(
            f"{i}. [{name[:-1]} {it.item_id}] {_clip(self._display_text(name, it.item_id))}"
            for i, (name, it) in enumerate(indexed)
        )
        response = self._call(
            state, "context_refine",
            {"sub_query": sq.grounded_text or sq.text, "candidates": candidates},
        )
        fallback = False
        out_of_range: list[int] = []
        try:
            indices = parse_keep_response(response)
        except ValueError as exc:
            logger.warning("refine response unparseable for %s: %s", sq.sq_id, exc)
            indices = []
        seen: set[int] = set()
        kept: list[int] = []
        for idx in indices:
            if idx in seen:
                continue
            seen.add(idx)
            if not 0 <= idx < len(indexed):
                out_of_range.append(idx)
                continue
            kept.append(idx)
        if out_of_range:
            state.flags.append("refine_out_of_range")
            logger.warning("refine returned out-of-range indices %s for %s",
                           out_of_range, sq.sq_id)
        if not kept:
            fallback = True
            state.flags.append("refine_fallback")
            kept = list(range(min(self.options.refine_fallback_k, len(indexed))))
        refined = RetrievedContext()
        for idx in sorted(kept):
            name, item = indexed[idx]
            getattr(refined, name).append(item)
        state.trace.emit(
            "refine", sq_id=sq.sq_id,
            kept={
                "chunks": [it.item_id for it in refined.chunks],
                "entities": [it.item_id for it in refined.entities],
                "relations": [it.item_id for it in refined.relations],
            },
            dropped=len(indexed) - refined.total(),
            fallback=fallback, out_of_range=out_of_range,
        )
        return refined

    def _answer_subquery(self, state: _Run, sq: SubQuery,
                         refined: RetrievedContext) -> str | None:
        # The intermediate answer only feeds grounding history and draft
        # findings; skip the call when neither consumer is enabled.
        if not (self.options.qg or self.options.ld):
            return None
        context = self._context_lines(refined) or "(nothing retrieved)"
        response = self._call(
            state, "sub_answer",
            {"sub_query": sq.grounded_text or sq.text, "context": context},
        )
        answer = response.strip()
        if not answer:
            answer = "UNKNOWN"
            state.flags.append("empty_subanswer")
        sq.answer = answer
        sq.status = STATUS_ANSWERED
        state.trace.emit("answer", sq_id=sq.sq_id, answer=answer)
        return answer

    def _append_record(self, state: _Run, record: EvidenceRecord) -> None:
        state.pool.append(record)
        merged = state.pool.merged_context
        event = {
            "sq_id": record.sub_query.sq_id,
            "items": self._event_items(record.refined_context),
            "merged": {
                "chunks": [it.item_id for it in merged.chunks],
                "entities": [it.item_id for it in merged.entities],
                "relations": [it.item_id for it in merged.relations],
            },
            "pool_records": len(state.pool.records),
        }
        if state.goldens:
            recall = evidence_recall(state.goldens, self._pool_evidence_texts(state))
            state.recall_by_step.append(recall)
            event["recall"] = recall
        state.trace.emit("evidence", **event)

    def _draft(self, state: _Run) -> Draft:
        findings = []
        for record in state.pool.records:
            sq = record.sub_query
            line = f"{sq.sq_id} [{sq.channel}] {sq.grounded_text or sq.text}"
            if record.intermediate_answer is not None:
                line += f" => {record.intermediate_answer}"
            findings.append(line)
        response = self._call(
            state, "logic_draft",
            {"question": state.question, "findings": "\n".join(findings)},
        )
        draft = parse_draft_response(response)
        if not draft.steps:
            draft.steps = [DraftStep(claim=response.strip())]
            state.flags.append("draft_unparseable")
        state.trace.emit(
            "draft", round=state.rounds_used,
            steps=[[step.claim, step.refs] for step in draft.steps],
            gaps=draft.gaps,
        )
        return draft

    def _verify(self, state: _Run, draft: Draft) -> tuple[str, list[str]]:
        bindings = {
            "question": state.question,
            "draft": draft.raw,
            "evidence": self._context_lines(state.pool.merged_context)
            or "(no evidence retrieved)",
        }
        verdict = None
        reasons: list[str] = []
        for attempt in range(2):
            response = self._call(state, "evidence_verify", bindings)
            try:
                verdict, reasons = parse_verdict_response(response)
                break
            except ValueError as exc:
                logger.warning("verify response unparseable (attempt %d): %s",
                               attempt + 1, exc)
        if verdict is None:
            verdict, reasons = "reject", ["verification unparseable"]
            state.flags.append("verification_unparseable")
        state.trace.emit("verdict", round=state.rounds_used,
                         verdict=verdict, reasons=reasons)
        return verdict, reasons

    def _expand(self, state: _Run, draft: Draft, reasons: list[str],
                round_no: int) -> list[SubQuery]:
        gaps = draft.gaps + reasons
        gaps_text = "\n".join(f"- {gap}" for gap in gaps) or "- (none listed)"
        response = self._call(
            state, "query_expand",
            {"question": state.question, "gaps": gaps_text},
        )
        try:
            pairs = parse_expansion_response(response)
        except ValueError as exc:
            logger.warning("expansion response unparseable: %s", exc)
            state.flags.append("expansion_unparseable")
            pairs = []
        if len(pairs) > self.options.max_expansions:
            state.flags.append("expansions_truncated")
            pairs = pairs[: self.options.max_expansions]
        out = []
        state.trace.emit(
            "expand", round=round_no,
            queries=[[channel, text] for channel, text in pairs],
        )
        for channel, text in pairs:
            out.append(self._route(state, text, channel, f"expansion:{round_no}"))
        return out

    def _final_answer(self, state: _Run, draft: Draft | None) -> str:
        answers = []
        for record in state.pool.records:
            if record.intermediate_answer is not None:
                sq = record.sub_query
                answers.append(
                    f"{sq.sq_id}: {sq.grounded_text or sq.text} => "
                    f"{record.intermediate_answer}"
                )
        response = self._call(
            state, "final_answer",
            {
                "question": state.question,
                "context": self._context_lines(state.pool.merged_context)
                or "(no evidence retrieved)",
                "answers": "\n".join(answers) or "(none)",
                "draft": draft.raw if draft is not None else "(none)",
            },
        )
        answer = response.strip()
        state.trace.emit("final_answer", answer=answer, verified=state.verified)
        return answer

    # ------------------------------------------------------------------
    # text resolution
    # ------------------------------------------------------------------

    def _evidence_text(self, table: str, item_id: str) -> str:
        """The text an item contributes as an evidence carrier: chunk body
        for chunks, description for graph items."""
        kb = self.retriever.kb
        if table == "chunks":
            return kb.chunks[item_id].text
        if table == "entities":
            return kb.entities[item_id].description
        return kb.relations[item_id].description

    def _display_text(self, table: str, item_id: str) -> str:
        """Prompt-facing rendering; names graph items for readability."""
        kb = self.retriever.kb
        if table == "chunks":
            return kb.chunks[item_id].text
        if table == "entities":
            entity = kb.entities[item_id]
            return f"{entity.name}: {entity.description}" if entity.description else entity.name
        relation = kb.relations[item_id]
        head = kb.entities[relation.head_entity_id].name
        tail = kb.entities[relation.tail_entity_id].name
        if relation.description:
            return f"{head} -> {tail}: {relation.description}"
        return f"{head} -> {tail}"

    def _event_items(self, context: RetrievedContext) -> list[list]:
        items = []
        for table in ("chunks", "entities", "relations"):
            for it in getattr(context, table):
                items.append(
                    [table[:-1], it.item_id, it.score,
                     self._evidence_text(table, it.item_id)]
                )
        return items

    def _context_lines(self, context: RetrievedContext) -> str:
        lines = []
        i = 1
        for table in ("chunks", "entities", "relations"):
            for it in getattr(context, table):
                lines.append(
                    f"{i}. [{table[:-1]} {it.item_id}] "
                    f"{_clip(self._display_text(table, it.item_id))}"
                )
                i += 1
        return "\n".join(lines)

    def _pool_evidence_texts(self, state: _Run) -> list[str]:
        merged = state.pool.merged_context
        texts = []
        for table in ("chunks", "entities", "relations"):
            for it in getattr(merged, table):
                texts.append(self._evidence_text(table, it.item_id))
        return texts

    # ------------------------------------------------------------------
    # plumbing
    # ------------------------------------------------------------------

    def _call(self, state: _Run, template: str, bindings: dict[str, str]) -> str:
        messages = render_prompt(template, bindings)
        response = self.client.complete(messages, tag=template)
        state.llm_calls += 1
        ordinal = state.template_ordinals.get(template, 0) + 1
        state.template_ordinals[template] = ordinal
        state.trace.emit(
            "llm_call", template=template, ordinal=ordinal,
            prompt_digest=prompt_digest(messages),
            response_digest=prompt_digest([{"response": response}]),
        )
        return response


@dataclass
class _Run:
    """Mutable per-run state; never shared across runs."""

    question: str
    mode: str
    goldens: list[str] | None = None
    trace: Trace = field(default_factory=Trace)
    sub_queries: list[SubQuery] = field(default_factory=list)
    pool: EvidencePool = field(default_factory=EvidencePool)
    flags: list[str] = field(default_factory=list)
    llm_calls: int = 0
    retrieval_calls: int = 0
    rounds_used: int = 0
    recall_by_step: list[float] = field(default_factory=list)
    template_ordinals: dict[str, int] = field(default_factory=dict)
    answer: str = ""
    verified: bool | None = None

    def answer_history(self) -> list[str]:
        lines = []
        for i, sq in enumerate(self.sub_queries, start=1):
            if sq.answer is not None:
                lines.append(f"Entity#{i} = {sq.answer}   [{sq.text}]")
        return lines
