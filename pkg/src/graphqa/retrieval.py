"""Dense retrieval over the graph store.

Two channels with disjoint targets: semantic retrieval scores chunks only,
relational retrieval scores entities and relations only (each list gets its
own top-k). Hybrid merges both. Relational retrieval optionally expands
around its retained entities through the graph, decaying scores per hop.

Scoring is one dot product per stored row (vectors are pre-normalized, so
dot is cosine), rounded to 12 decimals. Each list sorts by descending score
with ties broken by ascending id.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .embedding import cosine
from .errors import CorruptStoreError, InvalidArgumentError
from .kb import Entity, GraphKB, Relation, id_key

logger = logging.getLogger(__name__)

CHANNEL_SEMANTIC = "semantic"
CHANNEL_RELATIONAL = "relational"
CHANNEL_HYBRID = "hybrid"
CHANNELS = (CHANNEL_SEMANTIC, CHANNEL_RELATIONAL, CHANNEL_HYBRID)

DEFAULT_TOP_K = 30
DEFAULT_HOP_EXPANSION = 1
DEFAULT_HOP_DECAY = 0.5

_EMBED_META = "embeddings.json"
_TABLES = ("chunks", "entities", "relations")


def entity_text(entity: Entity) -> str:
    """Text embedded for an entity row."""
    return f"{entity.name}: {entity.description}"


def relation_text(kb: GraphKB, relation: Relation) -> str:
    """Text embedded for a relation row."""
    head = kb.entities[relation.head_entity_id].name
    tail = kb.entities[relation.tail_entity_id].name
    return f"{head} {relation.description} {tail}"


@dataclass
class ScoredItem:
    item_id: str
    score: float


@dataclass
class RetrievedContext:
    """One retrieval's result: three ranked id/score lists."""

    chunks: list[ScoredItem] = field(default_factory=list)
    entities: list[ScoredItem] = field(default_factory=list)
    relations: list[ScoredItem] = field(default_factory=list)

    def ids(self) -> dict[str, set[str]]:
        return {
            "chunks": {it.item_id for it in self.chunks},
            "entities": {it.item_id for it in self.entities},
            "relations": {it.item_id for it in self.relations},
        }

    def total(self) -> int:
        return len(self.chunks) + len(self.entities) + len(self.relations)

    def is_empty(self) -> bool:
        return self.total() == 0


def rank_list(scored: dict[str, float], k: int | None = None) -> list[ScoredItem]:
    """Descending score, ties by ascending id; truncated to k when given."""
    ordered = sorted(scored.items(), key=lambda kv: (-kv[1], id_key(kv[0])))
    if k is not None:
        ordered = ordered[:k]
    return [ScoredItem(item_id, score) for item_id, score in ordered]


def merge_contexts(a: RetrievedContext, b: RetrievedContext) -> RetrievedContext:
    """Per-list union keyed by id keeping the max score, re-sorted."""
    out = RetrievedContext()
    for name in _TABLES:
        scores: dict[str, float] = {}
        for item in getattr(a, name) + getattr(b, name):
            prev = scores.get(item.item_id)
            if prev is None or item.score > prev:
                scores[item.item_id] = item.score
        setattr(out, name, rank_list(scores))
    return out


class Retriever:
    """Embeds every store row once, then answers channel-scoped queries."""

    def __init__(
        self,
        kb: GraphKB,
        embedder,
        top_k: int = DEFAULT_TOP_K,
        hop_expansion: int = DEFAULT_HOP_EXPANSION,
        hop_decay: float = DEFAULT_HOP_DECAY,
    ):
        if top_k < 1:
            raise InvalidArgumentError("top_k must be >= 1")
        if hop_expansion < 0:
            raise InvalidArgumentError("hop_expansion must be >= 0")
        if not 0.0 < hop_decay <= 1.0:
            raise InvalidArgumentError("hop_decay must be in (0, 1]")
        self.kb = kb
        self.embedder = embedder
        self.top_k = top_k
        self.hop_expansion = hop_expansion
        self.hop_decay = hop_decay
        self._ids: dict[str, list[str]] = {}
        self._matrices: dict[str, np.ndarray] = {}
        self._built = False

    # ------------------------------------------------------------------
    # embedding matrices
    # ------------------------------------------------------------------

    def build(self) -> None:
        """Embed all rows. Row order is id order, matching persistence."""
        kb = self.kb
        chunk_ids = sorted(kb.chunks, key=id_key)
        entity_ids = sorted(kb.entities, key=id_key)
        relation_ids = sorted(kb.relations, key=id_key)
        self._ids = {
            "chunks": chunk_ids,
            "entities": entity_ids,
            "relations": relation_ids,
        }
        self._matrices = {
            "chunks": self.embedder.embed_batch([kb.chunks[c].text for c in chunk_ids]),
            "entities": self.embedder.embed_batch(
                [entity_text(kb.entities[e]) for e in entity_ids]
            ),
            "relations": self.embedder.embed_batch(
                [relation_text(kb, kb.relations[r]) for r in relation_ids]
            ),
        }
        self._built = True

    def matrix(self, table: str) -> np.ndarray:
        self._ensure_built()
        return self._matrices[table]

    def row_ids(self, table: str) -> list[str]:
        self._ensure_built()
        return list(self._ids[table])

    def _ensure_built(self) -> None:
        if not self._built:
            self.build()

    # ------------------------------------------------------------------
    # persistence sidecars
    # ------------------------------------------------------------------

    def save_embeddings(self, directory: str | Path) -> None:
        self._ensure_built()
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        meta = {"embedder": self.embedder.identity, "dim": int(self.embedder.dim)}
        for table in _TABLES:
            np.save(directory / f"{table}.npy", self._matrices[table])
            meta[table] = len(self._ids[table])
        with open(directory / _EMBED_META, "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def load_embeddings(self, directory: str | Path) -> None:
        directory = Path(directory)
        meta_path = directory / _EMBED_META
        if not meta_path.exists():
            raise CorruptStoreError("missing embeddings metadata", str(meta_path))
        with open(meta_path, encoding="utf-8") as fh:
            meta = json.load(fh)
        if meta.get("embedder") != self.embedder.identity:
            raise CorruptStoreError(
                f"embeddings were built with {meta.get('embedder')!r}, "
                f"retriever uses {self.embedder.identity!r}",
                str(meta_path),
            )
        kb = self.kb
        self._ids = {
            "chunks": sorted(kb.chunks, key=id_key),
            "entities": sorted(kb.entities, key=id_key),
            "relations": sorted(kb.relations, key=id_key),
        }
        self._matrices = {}
        for table in _TABLES:
            path = directory / f"{table}.npy"
            if not path.exists():
                raise CorruptStoreError("missing embeddings sidecar", str(path))
            mat = np.load(path)
            if mat.shape[0] != len(self._ids[table]):
                raise CorruptStoreError(
                    f"{table} sidecar has {mat.shape[0]} rows, store has "
                    f"{len(self._ids[table])}",
                    str(path),
                )
            self._matrices[table] = mat
        self._built = True

    # ------------------------------------------------------------------
    # querying
    # ------------------------------------------------------------------

    def retrieve(self, query: str, channel: str,
                 top_k: int | None = None) -> RetrievedContext:
        if channel == CHANNEL_SEMANTIC:
            return self.semantic_retrieve(query, top_k)
        if channel == CHANNEL_RELATIONAL:
            return self.relational_retrieve(query, top_k)
        if channel == CHANNEL_HYBRID:
            return self.hybrid_retrieve(query, top_k)
        raise InvalidArgumentError(f"unknown channel {channel!r}")

    def semantic_retrieve(self, query: str, top_k: int | None = None) -> RetrievedContext:
        """Top-k chunks by cosine; no graph items."""
        k = self._k(top_k)
        self._ensure_built()
        qvec = self.embedder.embed(query)
        return RetrievedContext(chunks=rank_list(self._score_table("chunks", qvec), k))

    def relational_retrieve(
        self,
        query: str,
        top_k: int | None = None,
        hop_expansion: int | None = None,
    ) -> RetrievedContext:
        """Top-k entities and top-k relations by cosine, then hop expansion
        around the retained entities; no chunks.

        An item first reached in the h-th expansion hop of a seed entity
        scores seed_score * decay^h; the best score wins when direct and
        expanded scores collide. Both lists re-truncate to k afterwards.
        """
        k = self._k(top_k)
        hops = self.hop_expansion if hop_expansion is None else hop_expansion
        if hops < 0:
            raise InvalidArgumentError("hop_expansion must be >= 0")
        self._ensure_built()
        qvec = self.embedder.embed(query)
        entities = rank_list(self._score_table("entities", qvec), k)
        relations = rank_list(self._score_table("relations", qvec), k)
        if hops < 1 or not entities:
            return RetrievedContext(entities=entities, relations=relations)

        best_entities = {it.item_id: it.score for it in entities}
        best_relations = {it.item_id: it.score for it in relations}
        for seed in entities:
            seen_entities = {seed.item_id}
            seen_relations: set[str] = set()
            for depth in range(1, hops + 1):
                sub = self.kb.neighbors(seed.item_id, depth)
                decayed = round(seed.score * self.hop_decay**depth, 12)
                for ent in sub.entities:
                    if ent.entity_id in seen_entities:
                        continue
                    seen_entities.add(ent.entity_id)
                    if decayed > best_entities.get(ent.entity_id, float("-inf")):
                        best_entities[ent.entity_id] = decayed
                for rel in sub.relations:
                    if rel.relation_id in seen_relations:
                        continue
                    seen_relations.add(rel.relation_id)
                    if decayed > best_relations.get(rel.relation_id, float("-inf")):
                        best_relations[rel.relation_id] = decayed
        return RetrievedContext(
            entities=rank_list(best_entities, k),
            relations=rank_list(best_relations, k),
        )

    def hybrid_retrieve(self, query: str, top_k: int | None = None) -> RetrievedContext:
        """Union of the semantic and relational channels for one query."""
        k = self._k(top_k)
        return merge_contexts(
            self.semantic_retrieve(query, k),
            self.relational_retrieve(query, k),
        )

    def _k(self, top_k: int | None) -> int:
        k = self.top_k if top_k is None else top_k
        if k < 1:
            raise InvalidArgumentError("top_k must be >= 1")
        return k

    def _score_table(self, table: str, qvec: np.ndarray) -> dict[str, float]:
        matrix = self._matrices[table]
        return {
            row_id: cosine(row, qvec)
            for row_id, row in zip(self._ids[table], matrix)
        }
