"""Graph knowledge base: entities, relations, and source text chunks.

The store is a directed multigraph over named entities, with every entity and
relation carrying provenance back to the chunks it was extracted from. Builds
are single-writer; after a build (or a load) the store is treated as immutable
and is safe for concurrent readers.

Ids are monotonically assigned integers rendered as strings, one counter per
table, so insertion order is reproducible and orderings are deterministic.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import CorruptStoreError, InvalidArgumentError, NotFoundError

FORMAT_VERSION = 1

_MANIFEST = "manifest.json"
_TABLES = ("chunks", "entities", "relations")

_WS = re.compile(r"\s+")

# Merged entity descriptions are joined with this separator and capped so a
# frequently-mentioned entity cannot grow without bound.
DESC_SEPARATOR = " | "
DEFAULT_DESC_CAP = 2048


def id_key(item_id: str) -> tuple[int, str]:
    """Sort key that orders decimal-string ids numerically.

    For non-padded decimal strings, (length, lexicographic) equals numeric
    order; non-numeric ids still sort deterministically.
    """
    return (len(item_id), item_id)


def normalize_name(name: str) -> str:
    """Entity identity: case-folded, whitespace-collapsed surface name."""
    return _WS.sub(" ", name.strip()).casefold()


@dataclass
class Chunk:
    chunk_id: str
    doc_id: str
    ordinal: int
    text: str
    unit_count: int


@dataclass
class Entity:
    entity_id: str
    name: str
    properties: list[tuple[str, str]] = field(default_factory=list)
    description: str = ""
    source_chunk_ids: set[str] = field(default_factory=set)


@dataclass
class Relation:
    relation_id: str
    head_entity_id: str
    tail_entity_id: str
    properties: list[tuple[str, str]] = field(default_factory=list)
    description: str = ""
    source_chunk_ids: set[str] = field(default_factory=set)


@dataclass
class Subgraph:
    """Result of a neighborhood expansion: reachable entities plus the
    relations traversed to reach them."""

    entities: list[Entity]
    relations: list[Relation]

    def entity_ids(self) -> set[str]:
        return {e.entity_id for e in self.entities}

    def relation_ids(self) -> set[str]:
        return {r.relation_id for r in self.relations}


class GraphKB:
    """In-memory graph store with JSONL persistence.

    ``meta`` holds build metadata (chunking parameters, extractor identity)
    and round-trips through the manifest. ``flags`` records anomalies noticed
    at insert time, e.g. self-loop relations.
    """

    def __init__(self, desc_cap: int = DEFAULT_DESC_CAP):
        self.entities: dict[str, Entity] = {}
        self.relations: dict[str, Relation] = {}
        self.chunks: dict[str, Chunk] = {}
        self.adjacency: dict[str, set[str]] = {}
        self.meta: dict = {}
        self.flags: list[str] = []
        self.desc_cap = desc_cap
        self._by_name: dict[str, str] = {}
        self._next = {"entity": 1, "relation": 1, "chunk": 1}

    # ------------------------------------------------------------------
    # mutation (build phase only)
    # ------------------------------------------------------------------

    def add_chunk(self, doc_id: str, ordinal: int, text: str, unit_count: int) -> str:
        if not text:
            raise InvalidArgumentError("chunk text must be non-empty")
        for c in self.chunks.values():
            if c.doc_id == doc_id and c.ordinal == ordinal:
                raise InvalidArgumentError(
                    f"duplicate chunk position ({doc_id!r}, {ordinal})"
                )
        chunk_id = self._assign("chunk")
        self.chunks[chunk_id] = Chunk(chunk_id, doc_id, ordinal, text, unit_count)
        return chunk_id

    def upsert_entity(
        self,
        name: str,
        properties: list[tuple[str, str]] | None = None,
        description: str = "",
        source_chunk_ids: set[str] | None = None,
    ) -> str:
        """Insert an entity or merge it into the existing one with the same
        normalized name. Returns the entity id either way.

        Merging unions properties and source chunk ids and concatenates new
        descriptions (deduplicated, capped at ``desc_cap`` characters).
        """
        if not name or not name.strip():
            raise InvalidArgumentError("entity name must be non-empty")
        props = [tuple(p) for p in (properties or [])]
        sources = set(source_chunk_ids or ())
        for cid in sources:
            if cid not in self.chunks:
                raise NotFoundError(f"unknown source chunk id {cid!r}")

        key = normalize_name(name)
        existing_id = self._by_name.get(key)
        if existing_id is None:
            entity_id = self._assign("entity")
            self.entities[entity_id] = Entity(
                entity_id, name.strip(), props, description, sources
            )
            self.adjacency.setdefault(entity_id, set())
            self._by_name[key] = entity_id
            return entity_id

        ent = self.entities[existing_id]
        for p in props:
            if p not in ent.properties:
                ent.properties.append(p)
        ent.source_chunk_ids |= sources
        if description:
            segments = ent.description.split(DESC_SEPARATOR) if ent.description else []
            if description not in segments:
                segments.append(description)
                ent.description = DESC_SEPARATOR.join(segments)[: self.desc_cap]
        return existing_id

    def insert_relation(
        self,
        head_entity_id: str,
        tail_entity_id: str,
        properties: list[tuple[str, str]] | None = None,
        description: str = "",
        source_chunk_ids: set[str] | None = None,
    ) -> str:
        """Store a directed relation; parallel relations between the same
        pair are kept as distinct edges."""
        if head_entity_id not in self.entities:
            raise NotFoundError(f"unknown head entity id {head_entity_id!r}")
        if tail_entity_id not in self.entities:
            raise NotFoundError(f"unknown tail entity id {tail_entity_id!r}")
        relation_id = self._assign("relation")
        self.relations[relation_id] = Relation(
            relation_id,
            head_entity_id,
            tail_entity_id,
            [tuple(p) for p in (properties or [])],
            description,
            set(source_chunk_ids or ()),
        )
        self.adjacency.setdefault(head_entity_id, set()).add(relation_id)
        self.adjacency.setdefault(tail_entity_id, set()).add(relation_id)
        if head_entity_id == tail_entity_id:
            self.flags.append(f"self_loop:{relation_id}")
        return relation_id

    # ------------------------------------------------------------------
    # lookups
    # ------------------------------------------------------------------

    def entity_by_name(self, name: str) -> Entity | None:
        entity_id = self._by_name.get(normalize_name(name))
        return self.entities.get(entity_id) if entity_id else None

    def neighbors(self, entity_id: str, hops: int) -> Subgraph:
        """Entities reachable within ``hops`` relation traversals (direction
        ignored) plus the relations traversed getting there, ordered
        deterministically by id.

        A relation is traversed when one of its endpoints is expanded, so a
        relation between two hop-h entities only appears at hops = h + 1.
        """
        if hops < 1:
            raise InvalidArgumentError("hops must be >= 1")
        if entity_id not in self.entities:
            raise NotFoundError(f"unknown entity id {entity_id!r}")

        seen = {entity_id}
        rel_seen: set[str] = set()
        frontier = [entity_id]
        for _ in range(hops):
            nxt = []
            for eid in frontier:
                for rid in self.adjacency.get(eid, ()):
                    rel_seen.add(rid)
                    rel = self.relations[rid]
                    for other in (rel.head_entity_id, rel.tail_entity_id):
                        if other not in seen:
                            seen.add(other)
                            nxt.append(other)
            frontier = nxt
            if not frontier:
                break

        return Subgraph(
            entities=[self.entities[i] for i in sorted(seen, key=id_key)],
            relations=[self.relations[i] for i in sorted(rel_seen, key=id_key)],
        )

    def counts(self) -> dict[str, int]:
        return {
            "chunks": len(self.chunks),
            "entities": len(self.entities),
            "relations": len(self.relations),
        }

    def audit(self) -> list[str]:
        """Full-store consistency check; returns a list of problems (empty
        when the store is healthy)."""
        problems = []
        for rid, rel in self.relations.items():
            for endpoint in (rel.head_entity_id, rel.tail_entity_id):
                if endpoint not in self.entities:
                    problems.append(f"relation {rid}: dangling endpoint {endpoint}")
                elif rid not in self.adjacency.get(endpoint, ()):
                    problems.append(f"relation {rid}: missing from adjacency[{endpoint}]")
        for eid, rids in self.adjacency.items():
            if eid not in self.entities:
                problems.append(f"adjacency references unknown entity {eid}")
            for rid in rids:
                rel = self.relations.get(rid)
                if rel is None:
                    problems.append(f"adjacency[{eid}] references unknown relation {rid}")
                elif eid not in (rel.head_entity_id, rel.tail_entity_id):
                    problems.append(f"adjacency[{eid}] lists unrelated relation {rid}")
        for ent in self.entities.values():
            for cid in ent.source_chunk_ids:
                if cid not in self.chunks:
                    problems.append(f"entity {ent.entity_id}: unknown chunk {cid}")
        for rel in self.relations.values():
            for cid in rel.source_chunk_ids:
                if cid not in self.chunks:
                    problems.append(f"relation {rel.relation_id}: unknown chunk {cid}")
        positions = set()
        for c in self.chunks.values():
            pos = (c.doc_id, c.ordinal)
            if pos in positions:
                problems.append(f"duplicate chunk position {pos}")
            positions.add(pos)
        return problems

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GraphKB):
            return NotImplemented
        return (
            self.entities == other.entities
            and self.relations == other.relations
            and self.chunks == other.chunks
            and self.adjacency == other.adjacency
            and self.meta == other.meta
            and self.flags == other.flags
        )

    # ------------------------------------------------------------------
    # persistence
    # ------------------------------------------------------------------

    def save(self, directory: str | Path) -> None:
        """Write the store as a manifest plus one JSONL file per table.

        Serialization is canonical (id order, sorted keys, sorted id sets),
        so saving an unchanged store is byte-identical.
        """
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        rows = {
            "chunks": [
                {
                    "chunk_id": c.chunk_id,
                    "doc_id": c.doc_id,
                    "ordinal": c.ordinal,
                    "text": c.text,
                    "unit_count": c.unit_count,
                }
                for c in self._ordered(self.chunks)
            ],
            "entities": [
                {
                    "entity_id": e.entity_id,
                    "name": e.name,
                    "properties": [list(p) for p in e.properties],
                    "description": e.description,
                    "source_chunk_ids": sorted(e.source_chunk_ids, key=id_key),
                }
                for e in self._ordered(self.entities)
            ],
            "relations": [
                {
                    "relation_id": r.relation_id,
                    "head_entity_id": r.head_entity_id,
                    "tail_entity_id": r.tail_entity_id,
                    "properties": [list(p) for p in r.properties],
                    "description": r.description,
                    "source_chunk_ids": sorted(r.source_chunk_ids, key=id_key),
                }
                for r in self._ordered(self.relations)
            ],
        }
        for table in _TABLES:
            with open(directory / f"{table}.jsonl", "w", encoding="utf-8") as fh:
                for row in rows[table]:
                    fh.write(_dumps(row) + "\n")
        manifest = {
            "format_version": FORMAT_VERSION,
            "counts": self.counts(),
            "meta": self.meta,
            "flags": self.flags,
        }
        (directory / _MANIFEST).write_text(
            json.dumps(manifest, sort_keys=True, ensure_ascii=False, indent=2) + "\n",
            encoding="utf-8",
        )

    @classmethod
    def load(cls, directory: str | Path) -> "GraphKB":
        directory = Path(directory)
        manifest_path = directory / _MANIFEST
        if not manifest_path.exists():
            raise CorruptStoreError(f"missing manifest: {manifest_path}", str(manifest_path))
        try:
            manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise CorruptStoreError(
                f"unreadable manifest {manifest_path}: {exc}", str(manifest_path)
            ) from exc
        version = manifest.get("format_version")
        if version != FORMAT_VERSION:
            raise CorruptStoreError(
                f"format version mismatch in {manifest_path}: "
                f"got {version!r}, expected {FORMAT_VERSION}",
                str(manifest_path),
            )

        kb = cls()
        kb.meta = manifest.get("meta", {})
        kb.flags = list(manifest.get("flags", []))

        for row in _read_jsonl(directory / "chunks.jsonl"):
            chunk = Chunk(
                row["chunk_id"], row["doc_id"], row["ordinal"], row["text"], row["unit_count"]
            )
            kb.chunks[chunk.chunk_id] = chunk
        for row in _read_jsonl(directory / "entities.jsonl"):
            ent = Entity(
                row["entity_id"],
                row["name"],
                [tuple(p) for p in row["properties"]],
                row["description"],
                set(row["source_chunk_ids"]),
            )
            kb.entities[ent.entity_id] = ent
            kb.adjacency.setdefault(ent.entity_id, set())
            kb._by_name[normalize_name(ent.name)] = ent.entity_id
        for row in _read_jsonl(directory / "relations.jsonl"):
            rel = Relation(
                row["relation_id"],
                row["head_entity_id"],
                row["tail_entity_id"],
                [tuple(p) for p in row["properties"]],
                row["description"],
                set(row["source_chunk_ids"]),
            )
            kb.relations[rel.relation_id] = rel
            for endpoint in (rel.head_entity_id, rel.tail_entity_id):
                if endpoint not in kb.entities:
                    raise CorruptStoreError(
                        f"relation {rel.relation_id} references unknown entity "
                        f"{endpoint} in {directory / 'relations.jsonl'}",
                        str(directory / "relations.jsonl"),
                    )
                kb.adjacency[endpoint].add(rel.relation_id)

        counts = manifest.get("counts", {})
        actual = kb.counts()
        for table in _TABLES:
            if counts.get(table) != actual[table]:
                raise CorruptStoreError(
                    f"count mismatch for {table} in {manifest_path}: "
                    f"manifest says {counts.get(table)}, files hold {actual[table]}",
                    str(manifest_path),
                )
        for kind, table in (("entity", "entities"), ("relation", "relations"), ("chunk", "chunks")):
            ids = [int(i) for i in getattr(kb, table) if i.isdigit()]
            kb._next[kind] = max(ids, default=0) + 1
        return kb

    # ------------------------------------------------------------------

    def _assign(self, kind: str) -> str:
        value = self._next[kind]
        self._next[kind] = value + 1
        return str(value)

    @staticmethod
    def _ordered(table: dict):
        return (table[i] for i in sorted(table, key=id_key))


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def _read_jsonl(path: Path):
    if not path.exists():
        raise CorruptStoreError(f"missing store file: {path}", str(path))
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorruptStoreError(
                    f"corrupt record at {path}:{lineno}: {exc}", str(path)
                ) from exc
