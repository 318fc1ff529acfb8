import pytest
from fastapi.testclient import TestClient

from memverse.config import EngineConfig
from memverse.errors import StoreLocked
from memverse.orchestrator import Orchestrator
from memverse.service import create_app
from memverse.types import ManualClock


@pytest.fixture
def client(tmp_path, clock):
    engine = Orchestrator(tmp_path / "store", clock=clock,
                          config=EngineConfig(consolidation_threshold=100))
    app = create_app(engine)
    with TestClient(app) as c:
        yield c


def test_healthz(client):
    body = client.get("/v1/healthz").json()
    assert body["status"] == "ok"
    assert body["format_version"] == "memverse-chunklog/1"


def test_add_then_stats(client):
    resp = client.post("/v1/memory", json={
        "content": "Alice adopted Milo", "session_id": "s1", "turn_index": 0})
    assert resp.status_code == 200
    assert resp.json()["chunk"]["sequence"] == 0
    client.post("/v1/consolidate")
    stats = client.get("/v1/stats").json()
    assert stats["chunk_count"] == 1
    assert stats["total_entities"] == 2
    assert stats["pending"] == 0


def test_error_envelope(client):
    resp = client.post("/v1/memory", json={
        "content": "  ", "session_id": "s1", "turn_index": 0})
    assert resp.status_code == 422
    body = resp.json()
    assert body["code"] == "empty_content" and body["message"]

    client.post("/v1/memory", json={
        "content": "x", "session_id": "s1", "turn_index": 0})
    dup = client.post("/v1/memory", json={
        "content": "y", "session_id": "s1", "turn_index": 0})
    assert dup.status_code == 409 and dup.json()["code"] == "duplicate_turn"


def test_query_reports_path_and_accesses(client):
    client.post("/v1/memory", json={
        "content": "Milo is a cat", "session_id": "s1", "turn_index": 0})
    client.post("/v1/consolidate")
    resp = client.get("/v1/query", params={"q": "Milo", "session": "other"}).json()
    assert resp["path"] == "ltm_retrieval"
    assert resp["accesses"] >= 1
    assert "Milo is a cat" in resp["context"]

    stm = client.get("/v1/query", params={"q": "Milo"}).json()
    assert stm["path"] == "stm_hit" and stm["accesses"] == 0


def test_query_empty_store(client):
    resp = client.get("/v1/query", params={"q": "anything", "session": "s9"})
    assert resp.status_code == 200
    assert resp.json()["chunks"] == []


def test_update_and_delete_endpoints(client):
    seq = client.post("/v1/memory", json={
        "content": "Alice likes Tea", "session_id": "s1",
        "turn_index": 0}).json()["chunk"]["sequence"]
    client.post("/v1/consolidate")
    patched = client.patch(f"/v1/memory/{seq}", json={"correction": "Alice likes Coffee"})
    assert patched.status_code == 200
    assert patched.json()["supersedes"] == seq

    new_seq = patched.json()["chunk"]["sequence"]
    deleted = client.delete(f"/v1/memory/{new_seq}")
    assert deleted.status_code == 200
    missing = client.delete(f"/v1/memory/{new_seq}")
    assert missing.status_code == 404


def test_export_endpoint(client, tmp_path):
    client.post("/v1/memory", json={
        "content": "Milo is a cat", "session_id": "s1", "turn_index": 0})
    client.post("/v1/consolidate")
    client.get("/v1/query", params={"q": "Milo", "session": "x"})
    out = str(tmp_path / "round.jsonl")
    resp = client.post("/v1/export", json={"out": out, "domain_tag": "felines"})
    assert resp.status_code == 200
    body = resp.json()
    assert body["round"] == 1 and body["pair_count"] == 1
    assert body["domain_tag"] == "felines"
    empty = client.post("/v1/export", json={})
    assert empty.status_code == 409 and empty.json()["code"] == "no_traces"


def test_prune_endpoint(client):
    resp = client.post("/v1/prune")
    assert resp.status_code == 200
    assert resp.json() == {"removed_entities": 0, "removed_relations": 0}


def test_store_locked_second_engine(tmp_path, clock):
    engine = Orchestrator(tmp_path / "store", clock=clock)
    try:
        with pytest.raises(StoreLocked):
            Orchestrator(tmp_path / "store", clock=clock)
    finally:
        engine.close()


def test_shutdown_restart_state_identical(tmp_path):
    clock = ManualClock(1_700_000_000_000)
    engine = Orchestrator(tmp_path / "store", clock=clock)
    app = create_app(engine)
    with TestClient(app) as c:
        c.post("/v1/memory", json={"content": "Alice adopted Milo",
                                   "session_id": "s1", "turn_index": 0})
        c.post("/v1/consolidate")
        pre = engine.graph.snapshot_bytes()
    # context exit ran shutdown: log flushed, snapshot written, lock released
    engine2 = Orchestrator(tmp_path / "store", clock=clock)
    try:
        assert engine2.graph.snapshot_bytes() == pre
        assert engine2.store.count_live() == 1
    finally:
        engine2.close()


def test_http_replay_byte_identical(tmp_path):
    def run(base):
        clock = ManualClock(1_700_000_000_000)
        engine = Orchestrator(base, clock=clock,
                              config=EngineConfig(consolidation_threshold=3))
        responses = []
        with TestClient(create_app(engine)) as c:
            for i in range(6):
                r = c.post("/v1/memory", json={
                    "content": f"Speaker{i} praised Topic{i % 2}",
                    "session_id": "s", "turn_index": i})
                responses.append(r.content)
                clock.advance(500)
            responses.append(c.get("/v1/query",
                                   params={"q": "Topic1", "session": "zz"}).content)
            responses.append(c.get("/v1/stats").content)
        return responses

    assert run(tmp_path / "a") == run(tmp_path / "b")
