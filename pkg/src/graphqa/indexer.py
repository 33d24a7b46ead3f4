"""Corpus indexing: chunking, entity/relation extraction, KB assembly.

Two extractor backends ship: a deterministic rule-based extractor (capitalized
spans as entities, connective verbs between co-occurring spans as relations)
so every pipeline runs without network access, and an LLM-backed extractor
that parses a delimited record response.
"""

from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .errors import BuildError, ChunkingError, InvalidArgumentError
from .kb import GraphKB

logger = logging.getLogger(__name__)

DEFAULT_CHUNK_SIZE = 400
DEFAULT_OVERLAP = 0


@dataclass
class Document:
    doc_id: str
    body: str
    title: str = ""


@dataclass
class EntityCandidate:
    name: str
    properties: list[tuple[str, str]] = field(default_factory=list)
    description: str = ""


@dataclass
class RelationCandidate:
    head_name: str
    tail_name: str
    properties: list[tuple[str, str]] = field(default_factory=list)
    description: str = ""


@dataclass
class ExtractionResult:
    entities: list[EntityCandidate] = field(default_factory=list)
    relations: list[RelationCandidate] = field(default_factory=list)


@dataclass
class BuildReport:
    documents: int = 0
    chunks: int = 0
    entities: int = 0
    relations: int = 0
    merged_entities: int = 0
    skipped_relations: int = 0
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "documents": self.documents,
            "chunks": self.chunks,
            "entities": self.entities,
            "relations": self.relations,
            "merged_entities": self.merged_entities,
            "skipped_relations": self.skipped_relations,
            "warnings": self.warnings,
        }


# ----------------------------------------------------------------------
# corpus input
# ----------------------------------------------------------------------

def load_corpus(path: str | Path) -> list[Document]:
    """Read a JSONL corpus, one document per line: {doc_id, title?, body}."""
    docs = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise BuildError(f"corrupt corpus record at {path}:{lineno}: {exc}") from exc
            doc_id = row.get("doc_id")
            body = row.get("body")
            if not doc_id or not body:
                raise BuildError(f"corpus record at {path}:{lineno} needs doc_id and body")
            if doc_id in seen:
                raise BuildError(f"duplicate doc_id {doc_id!r} at {path}:{lineno}")
            seen.add(doc_id)
            docs.append(Document(doc_id=doc_id, body=body, title=row.get("title", "")))
    return docs


# ----------------------------------------------------------------------
# chunking
# ----------------------------------------------------------------------

def word_units(text: str) -> list[str]:
    """Default chunking unit: whitespace-delimited words."""
    return text.split()


@dataclass
class ChunkSpec:
    """One chunk's unit slice before it is stored."""

    ordinal: int
    text: str
    unit_count: int


def chunk_document(
    doc: Document,
    chunk_size_units: int = DEFAULT_CHUNK_SIZE,
    overlap_units: int = DEFAULT_OVERLAP,
    unit_fn=word_units,
) -> list[ChunkSpec]:
    """Split a document into chunks of ``chunk_size_units`` units with the
    given overlap. Chunk starts advance by size - overlap, so consecutive
    chunks share exactly ``overlap_units`` units (the last may be shorter).
    """
    if chunk_size_units < 1:
        raise InvalidArgumentError("chunk_size_units must be >= 1")
    if not 0 <= overlap_units < chunk_size_units:
        raise InvalidArgumentError("overlap_units must satisfy 0 <= overlap < size")
    units = unit_fn(doc.body)
    if not units:
        raise ChunkingError(f"document {doc.doc_id!r} has no chunkable units", doc.doc_id)

    stride = chunk_size_units - overlap_units
    chunks = []
    start = 0
    ordinal = 0
    while start < len(units):
        window = units[start : start + chunk_size_units]
        chunks.append(ChunkSpec(ordinal=ordinal, text=" ".join(window), unit_count=len(window)))
        ordinal += 1
        start += stride
    return chunks


# ----------------------------------------------------------------------
# rule-based extraction
# ----------------------------------------------------------------------

_SENTENCE_SPLIT = re.compile(r"(?<=[.!?])\s+")
_TOKEN = re.compile(r"[^\s]+")
_CAPITALIZED = re.compile(r"^[A-Z][A-Za-z0-9'&.-]*$")

# Sentence-initial function words are trimmed off the front of a span:
# determiners, pronouns, and similar words are only capitalized because they
# start the sentence, and never begin an entity name.
_INITIAL_STOPWORDS = {
    "a", "an", "the", "it", "he", "she", "they", "we", "i", "you", "this",
    "that", "these", "those", "there", "here", "in", "on", "at", "by", "for",
    "with", "from", "when", "where", "who", "what", "how", "why", "however",
    "meanwhile", "its", "his", "her", "their", "after", "before", "during",
    "although", "because", "since", "while", "both", "each", "many", "some",
}

# Lowercase connectors that may join two capitalized spans ("University of
# Chicago").
_CONNECTORS = {"of", "the", "and"}

_CONNECTIVE_VERB = re.compile(
    r"\b(is|are|was|were|has|have|had|became|become|becomes|died|born|lies|lay|"
    r"located|licensed|named|known|won|lost|made|created|wrote|written|painted|"
    r"directed|produced|founded|established|opened|closed|serves|served|moved|"
    r"lived|lives|occurred|happened|sits|stands|borders|joined|covers|includes|"
    r"contains|operates|operated|owns|owned|governs|hosts|hosted|broadcasts)\b"
)


def _strip_token(token: str) -> str:
    return token.strip("\"'()[]{},.;:!?")


_LEADING_TRIM = _INITIAL_STOPWORDS | _CONNECTORS


def _capitalized_spans(sentence: str) -> list[tuple[str, int, int]]:
    """Maximal spans of capitalized tokens, with character offsets.

    Connector words join two capitalized runs into one span. A span at the
    start of the sentence sheds leading function words (capitalized only by
    position), and is dropped entirely when nothing else remains.
    """
    matches = [(m.group(), m.start(), m.end()) for m in _TOKEN.finditer(sentence)]
    flags = []
    for raw, _, _ in matches:
        flags.append(bool(_CAPITALIZED.match(_strip_token(raw))))

    spans = []
    i = 0
    while i < len(matches):
        if not flags[i]:
            i += 1
            continue
        j = i
        while j + 1 < len(matches):
            if flags[j + 1]:
                j += 1
                continue
            # allow one connector between capitalized tokens
            word = _strip_token(matches[j + 1][0]).lower()
            if word in _CONNECTORS and j + 2 < len(matches) and flags[j + 2]:
                j += 2
                continue
            break
        k = i
        if i == 0:
            while k <= j and _strip_token(matches[k][0]).lower() in _LEADING_TRIM:
                k += 1
        if k > j:
            i = j + 1
            continue
        tokens = [_strip_token(matches[m][0]) for m in range(k, j + 1)]
        spans.append((" ".join(tokens), matches[k][1], matches[j][2]))
        i = j + 1
    return spans


def extract_rule_based(chunk_text: str) -> ExtractionResult:
    """Deterministic extractor: capitalized spans become entities; two spans
    co-occurring in a sentence with a connective verb between them become a
    relation whose description is the full sentence."""
    result = ExtractionResult()
    seen_entities = {}
    for sentence in _SENTENCE_SPLIT.split(chunk_text):
        sentence = sentence.strip()
        if not sentence:
            continue
        spans = _capitalized_spans(sentence)
        for name, _, _ in spans:
            if name not in seen_entities:
                cand = EntityCandidate(name=name, description=sentence)
                seen_entities[name] = cand
                result.entities.append(cand)
        for (head, _, h_end), (tail, t_start, _) in zip(spans, spans[1:]):
            gap = sentence[h_end:t_start].lower()
            verb = _CONNECTIVE_VERB.search(gap)
            if verb:
                result.relations.append(
                    RelationCandidate(
                        head_name=head,
                        tail_name=tail,
                        properties=[("verb", verb.group(1))],
                        description=sentence,
                    )
                )
    return result


# ----------------------------------------------------------------------
# LLM-backed extraction
# ----------------------------------------------------------------------

def parse_extraction_response(text: str) -> ExtractionResult:
    """Parse the delimited record grammar: one E|name|props|desc or
    R|head|tail|props|desc per line. Raises ValueError on any bad line."""
    result = ExtractionResult()
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        fields = [f.strip() for f in line.split("|")]
        if fields[0] == "E" and len(fields) == 4:
            result.entities.append(
                EntityCandidate(fields[1], _parse_props(fields[2]), fields[3])
            )
        elif fields[0] == "R" and len(fields) == 5:
            result.relations.append(
                RelationCandidate(fields[1], fields[2], _parse_props(fields[3]), fields[4])
            )
        else:
            raise ValueError(f"unparseable extraction line: {line!r}")
        if fields[0] == "E" and not fields[1]:
            raise ValueError("extraction record with empty entity name")
    return result


def _parse_props(text: str) -> list[tuple[str, str]]:
    props = []
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        key, _, value = part.partition("=")
        props.append((key.strip(), value.strip()))
    return props


class LLMExtractor:
    """Extraction backend that asks a chat model for delimited records."""

    def __init__(self, client, attempts: int = 2):
        from .prompts import render_prompt

        self._client = client
        self._render = render_prompt
        self.attempts = attempts

    @property
    def identity(self) -> str:
        return "llm"

    def __call__(self, chunk_text: str, warnings: list[str]) -> ExtractionResult:
        messages = self._render("extract", {"chunk_text": chunk_text})
        for attempt in range(self.attempts):
            response = self._client.complete(messages, tag="extract")
            try:
                return parse_extraction_response(response)
            except ValueError as exc:
                if attempt + 1 < self.attempts:
                    continue
                warnings.append(f"extraction unparseable after {self.attempts} attempts: {exc}")
        return ExtractionResult()


class RuleBasedExtractor:
    identity = "rules/v1"

    def __call__(self, chunk_text: str, warnings: list[str]) -> ExtractionResult:
        return extract_rule_based(chunk_text)


# ----------------------------------------------------------------------
# index build
# ----------------------------------------------------------------------

@dataclass
class IndexConfig:
    chunk_size_units: int = DEFAULT_CHUNK_SIZE
    overlap_units: int = DEFAULT_OVERLAP
    extract_workers: int = 1


def build_index(
    corpus: list[Document],
    config: IndexConfig | None = None,
    extractor=None,
) -> tuple[GraphKB, BuildReport]:
    """Chunk every document, run the extractor over each chunk, and aggregate
    candidates into a GraphKB.

    Extraction may run on several chunks concurrently; results are buffered
    and applied in chunk order, so the built store does not depend on
    completion order.
    """
    if not corpus:
        raise BuildError("corpus is empty")
    config = config or IndexConfig()
    extractor = extractor or RuleBasedExtractor()

    kb = GraphKB()
    report = BuildReport(documents=len(corpus))

    chunk_ids = []
    chunk_texts = []
    for doc in corpus:
        specs = chunk_document(doc, config.chunk_size_units, config.overlap_units)
        for spec in specs:
            cid = kb.add_chunk(doc.doc_id, spec.ordinal, spec.text, spec.unit_count)
            chunk_ids.append(cid)
            chunk_texts.append(spec.text)
    report.chunks = len(chunk_ids)

    per_chunk_warnings: list[list[str]] = [[] for _ in chunk_ids]

    def run_one(idx: int) -> ExtractionResult:
        return extractor(chunk_texts[idx], per_chunk_warnings[idx])

    workers = max(1, config.extract_workers)
    if workers == 1:
        results = [run_one(i) for i in range(len(chunk_ids))]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_one, range(len(chunk_ids))))

    for cid, result, warnings in zip(chunk_ids, results, per_chunk_warnings):
        report.warnings.extend(warnings)
        name_to_id = {}
        for cand in result.entities:
            before = len(kb.entities)
            eid = kb.upsert_entity(
                cand.name, cand.properties, cand.description, {cid}
            )
            if len(kb.entities) == before:
                report.merged_entities += 1
            name_to_id[cand.name] = eid
        for cand in result.relations:
            head = name_to_id.get(cand.head_name)
            if head is None:
                ent = kb.entity_by_name(cand.head_name)
                head = ent.entity_id if ent else None
            tail = name_to_id.get(cand.tail_name)
            if tail is None:
                ent = kb.entity_by_name(cand.tail_name)
                tail = ent.entity_id if ent else None
            if head is None or tail is None:
                report.skipped_relations += 1
                report.warnings.append(
                    f"chunk {cid}: relation {cand.head_name!r} -> {cand.tail_name!r} "
                    "skipped (unresolvable endpoint)"
                )
                continue
            kb.insert_relation(head, tail, cand.properties, cand.description, {cid})

    report.entities = len(kb.entities)
    report.relations = len(kb.relations)

    kb.meta = {
        "chunk_size_units": config.chunk_size_units,
        "overlap_units": config.overlap_units,
        "extractor": getattr(extractor, "identity", type(extractor).__name__),
        "documents": len(corpus),
    }

    problems = kb.audit()
    if problems:
        raise BuildError(f"store audit failed after build: {problems[:5]}")
    logger.info(
        "indexed %d docs: %d chunks, %d entities, %d relations",
        report.documents, report.chunks, report.entities, report.relations,
    )
    return kb, report
