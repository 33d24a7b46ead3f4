"""Graph store behavior: ids, merging, traversal, persistence."""

from __future__ import annotations

import pytest

from graphqa.errors import CorruptStoreError, InvalidArgumentError, NotFoundError
from graphqa.kb import DESC_SEPARATOR, GraphKB, id_key, normalize_name


def make_chain(n=3):
    """Entities E1..En connected in a path, one chunk for sources."""
    kb = GraphKB()
    cid = kb.add_chunk("d", 0, "chunk text", 2)
    eids = [kb.upsert_entity(f"Node {i}", source_chunk_ids={cid}) for i in range(n)]
    rids = [
        kb.insert_relation(eids[i], eids[i + 1], description=f"edge {i}",
                           source_chunk_ids={cid})
        for i in range(n - 1)
    ]
    return kb, eids, rids


def test_id_key_orders_numeric_strings():
    ids = ["10", "2", "1", "21", "3"]
    assert sorted(ids, key=id_key) == ["1", "2", "3", "10", "21"]


def test_ids_are_monotonic_per_table():
    kb = GraphKB()
    c1 = kb.add_chunk("d", 0, "one", 1)
    c2 = kb.add_chunk("d", 1, "two", 1)
    e1 = kb.upsert_entity("Alpha")
    e2 = kb.upsert_entity("Beta")
    r1 = kb.insert_relation(e1, e2)
    assert (c1, c2) == ("1", "2")
    assert (e1, e2) == ("1", "2")
    assert r1 == "1"


def test_normalize_name_folds_case_and_whitespace():
    assert normalize_name("  Ward   Township ") == "ward township"
    assert normalize_name("WIZE") == normalize_name("wize")


def test_entity_merge_by_normalized_name():
    kb = GraphKB()
    a = kb.upsert_entity("New Hope", [("kind", "town")], "a town")
    b = kb.upsert_entity("  new   hope ", [("kind", "town"), ("pop", "200")], "small place")
    assert a == b
    ent = kb.entities[a]
    assert ent.name == "New Hope"  # first spelling wins
    assert ent.properties == [("kind", "town"), ("pop", "200")]
    assert ent.description == f"a town{DESC_SEPARATOR}small place"


def test_entity_merge_deduplicates_description_segments():
    kb = GraphKB()
    eid = kb.upsert_entity("X", description="same line")
    kb.upsert_entity("x", description="same line")
    assert kb.entities[eid].description == "same line"


def test_entity_description_cap():
    kb = GraphKB(desc_cap=10)
    eid = kb.upsert_entity("X", description="12345")
    kb.upsert_entity("X", description="67890abc")
    assert kb.entities[eid].description == ("12345" + DESC_SEPARATOR + "67890abc")[:10]
    assert len(kb.entities[eid].description) == 10


def test_chunk_rejects_empty_text_and_duplicate_position():
    kb = GraphKB()
    kb.add_chunk("d", 0, "text", 1)
    with pytest.raises(InvalidArgumentError):
        kb.add_chunk("d", 0, "other", 1)
    with pytest.raises(InvalidArgumentError):
        kb.add_chunk("d", 1, "", 0)


def test_relation_requires_known_endpoints():
    kb = GraphKB()
    eid = kb.upsert_entity("A")
    with pytest.raises(NotFoundError):
        kb.insert_relation(eid, "99")
    with pytest.raises(NotFoundError):
        kb.insert_relation("99", eid)


def test_self_loop_is_stored_and_flagged():
    kb = GraphKB()
    eid = kb.upsert_entity("A")
    rid = kb.insert_relation(eid, eid, description="loop")
    assert rid in kb.relations
    assert f"self_loop:{rid}" in kb.flags


def test_parallel_relations_are_distinct():
    kb = GraphKB()
    a, b = kb.upsert_entity("A"), kb.upsert_entity("B")
    r1 = kb.insert_relation(a, b, description="first")
    r2 = kb.insert_relation(a, b, description="second")
    assert r1 != r2
    assert len(kb.relations) == 2


def test_neighbors_chain_by_hops():
    kb, eids, rids = make_chain(3)
    one = kb.neighbors(eids[0], 1)
    assert [e.entity_id for e in one.entities] == sorted([eids[0], eids[1]], key=id_key)
    assert [r.relation_id for r in one.relations] == [rids[0]]
    two = kb.neighbors(eids[0], 2)
    assert {e.entity_id for e in two.entities} == set(eids)
    assert {r.relation_id for r in two.relations} == set(rids)


def test_neighbors_triangle_far_edge_needs_two_hops():
    kb = GraphKB()
    a, b, c = (kb.upsert_entity(n) for n in "ABC")
    r_ab = kb.insert_relation(a, b)
    r_bc = kb.insert_relation(b, c)
    r_ac = kb.insert_relation(a, c)
    one = kb.neighbors(a, 1)
    # b and c are both reached, but the edge between them was not traversed
    assert {e.entity_id for e in one.entities} == {a, b, c}
    assert {r.relation_id for r in one.relations} == {r_ab, r_ac}
    two = kb.neighbors(a, 2)
    assert {r.relation_id for r in two.relations} == {r_ab, r_ac, r_bc}


def test_neighbors_direction_ignored():
    kb = GraphKB()
    a, b = kb.upsert_entity("A"), kb.upsert_entity("B")
    kb.insert_relation(b, a)  # points at a
    sub = kb.neighbors(a, 1)
    assert {e.entity_id for e in sub.entities} == {a, b}


def test_neighbors_validates_arguments():
    kb, eids, _ = make_chain(2)
    with pytest.raises(InvalidArgumentError):
        kb.neighbors(eids[0], 0)
    with pytest.raises(NotFoundError):
        kb.neighbors("404", 1)


def test_neighbors_output_sorted_by_id_key():
    kb = GraphKB()
    hub = kb.upsert_entity("Hub")
    others = [kb.upsert_entity(f"N{i}") for i in range(11)]
    for eid in others:
        kb.insert_relation(hub, eid)
    sub = kb.neighbors(hub, 1)
    ids = [e.entity_id for e in sub.entities]
    assert ids == sorted(ids, key=id_key)
    rids = [r.relation_id for r in sub.relations]
    assert rids == sorted(rids, key=id_key)


def test_counts_and_audit_clean(fixture_kb):
    counts = fixture_kb.counts()
    assert counts == {"chunks": 4, "entities": 5, "relations": 4}
    assert fixture_kb.audit() == []


def test_audit_reports_inconsistencies():
    kb, eids, rids = make_chain(2)
    kb.adjacency[eids[0]].discard(rids[0])
    problems = kb.audit()
    assert any("missing from adjacency" in p for p in problems)


def test_save_load_roundtrip_and_byte_identity(tmp_path, fixture_kb):
    first = tmp_path / "a"
    fixture_kb.save(first)
    loaded = GraphKB.load(first)
    assert loaded == fixture_kb
    second = tmp_path / "b"
    loaded.save(second)
    for name in ("manifest.json", "chunks.jsonl", "entities.jsonl", "relations.jsonl"):
        assert (first / name).read_bytes() == (second / name).read_bytes()


def test_load_missing_table_names_file(tmp_path, fixture_kb):
    directory = tmp_path / "store"
    fixture_kb.save(directory)
    (directory / "relations.jsonl").unlink()
    with pytest.raises(CorruptStoreError) as err:
        GraphKB.load(directory)
    assert "relations.jsonl" in str(err.value)


def test_load_corrupt_json_names_file(tmp_path, fixture_kb):
    directory = tmp_path / "store"
    fixture_kb.save(directory)
    path = directory / "entities.jsonl"
    path.write_text(path.read_text(encoding="utf-8") + "{broken\n", encoding="utf-8")
    with pytest.raises(CorruptStoreError) as err:
        GraphKB.load(directory)
    assert "entities.jsonl" in str(err.value)


def test_load_restores_id_counters(tmp_path, fixture_kb):
    directory = tmp_path / "store"
    fixture_kb.save(directory)
    kb = GraphKB.load(directory)
    new_eid = kb.upsert_entity("Completely New Entity")
    assert new_eid not in {e for e in fixture_kb.entities}
    assert int(new_eid) == max(int(e) for e in fixture_kb.entities) + 1
