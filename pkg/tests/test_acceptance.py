"""End-to-end acceptance criteria for the memory engine.

Each test prints one PASS line on success; tolerances and budgets are asserted
inline. The suite exercises the parametric route through an echo stub only —
no trainer component is required.
"""

import json
import os
import random
import sys
import time

import pytest
from fastapi.testclient import TestClient

from memverse.config import EngineConfig
from memverse.distill import TraceRecorder, format_prompt, read_training_file
from memverse.ltm_graph import PruneBudget
from memverse.orchestrator import Orchestrator, Path_
from memverse.retrieval import FullScanOracle
from memverse.service import create_app
from memverse.stm import StmWindow, Turn
from memverse.types import ManualClock, MemoryKind


def _report(n: int, text: str) -> None:
    sys.__stdout__.write(f"[PASS] criterion {n}: {text}\n")
    sys.__stdout__.flush()


# ---------------------------------------------------------------- criterion 1


def test_c1_provenance_closure(tmp_path):
    started = time.perf_counter()
    clock = ManualClock(1_700_000_000_000)
    engine = Orchestrator(tmp_path / "store", clock=clock,
                          config=EngineConfig(consolidation_threshold=50))
    verbs = ["visited", "painted", "praised", "studied", "ignored"]
    try:
        for i in range(1_000):
            engine.add(f"Person{i % 137} {verbs[i % 5]} Place{i % 211}",
                       session_id=f"s{i % 7}", turn_index=i)
            clock.advance(1_000)
            if (i + 1) % 50 == 0:
                engine.consolidate()
            if i % 100 == 99:
                # stress provenance repair on both mutation paths
                engine.update(i - 50, f"Person{i % 137} revisited Place{(i + 3) % 211}")
                engine.delete_chunk(i - 70)
        engine.consolidate()

        violations = engine.graph.scan_provenance_violations()
        assert violations == []
        live = set(engine.store.live_sequences())
        for ent in engine.graph.entities():
            assert ent.provenance
            assert {c.sequence for c in ent.provenance} <= live
        for rel in engine.graph.relations():
            assert rel.provenance
            assert {c.sequence for c in rel.provenance} <= live
    finally:
        engine.close()
    elapsed = time.perf_counter() - started
    assert elapsed < 30.0
    _report(1, f"provenance closure over 1,000 turns, 0 violations ({elapsed:.1f}s)")


# ---------------------------------------------------- criteria 2 & 3 (corpus)

N_FACTS = 500


@pytest.fixture(scope="module")
def fact_engine(tmp_path_factory):
    base = tmp_path_factory.mktemp("facts")
    clock = ManualClock(1_700_000_000_000)
    engine = Orchestrator(base / "store", clock=clock,
                          config=EngineConfig(consolidation_threshold=10_000))
    verbs = ["admires", "distrusts", "mentors", "sponsors"]
    for i in range(N_FACTS):
        engine.add(f"Subject{i:03d} {verbs[i % 4]} Object{i:03d}",
                   session_id="facts", turn_index=i)
        clock.advance(100)
    engine.consolidate()
    yield engine
    engine.close()


def test_c2_oracle_retrieval_recall(fact_engine):
    started = time.perf_counter()
    oracle = FullScanOracle(fact_engine.store)
    for i in range(N_FACTS):
        query = f"Who does Subject{i:03d} work with"
        result = fact_engine.retriever.retrieve(query)
        assert result.chunks, f"no chunks for fact {i}"
        oracle_ranked, _ = oracle.retrieve(query)
        assert result.chunks[0].sequence == i
        assert oracle_ranked[0].sequence == i
        assert result.chunks[0].sequence == oracle_ranked[0].sequence
    elapsed = time.perf_counter() - started
    assert elapsed < 60.0
    _report(2, f"rank-1 recall 100% on {N_FACTS} facts, matches oracle ({elapsed:.1f}s)")


def test_c3_efficiency_ordering(fact_engine):
    oracle = FullScanOracle(fact_engine.store)
    graph_total = 0
    scan_total = 0
    strict = 0
    for i in range(N_FACTS):
        query = f"Who does Subject{i:03d} work with"
        result = fact_engine.retriever.retrieve(query)
        _unused, scan_accesses = oracle.retrieve(query)
        graph_total += result.accesses
        scan_total += scan_accesses
        if result.accesses < scan_accesses:
            strict += 1
    mean_graph = graph_total / N_FACTS
    mean_scan = scan_total / N_FACTS
    assert mean_graph <= 0.20 * mean_scan
    assert strict / N_FACTS >= 0.99
    _report(3, f"mean accesses {mean_graph:.1f} vs full-scan {mean_scan:.1f}, "
               f"strict on {strict}/{N_FACTS} queries")


# ---------------------------------------------------------------- criterion 4


def test_c4_stm_randomized_vs_slicing_oracle():
    rng = random.Random(4242)
    window = StmWindow(capacity=10)
    oracle: list[Turn] = []
    capacity = 10
    pushed = 0
    evicted_total = 0
    for op in range(10_000):
        if rng.random() < 0.85:
            turn = Turn(chunk_id=op, query_text=f"turn {op}", timestamp=op)
            evicted = window.push(turn)
            oracle.append(turn)
            expected = oracle[:-capacity] if len(oracle) > capacity else []
            oracle = oracle[-capacity:]
            assert evicted == (expected[0] if expected else None)
            pushed += 1
            if evicted is not None:
                evicted_total += 1
        else:
            capacity = rng.randint(1, 30)
            evicted = window.resize(capacity)
            expected = oracle[:max(0, len(oracle) - capacity)]
            oracle = oracle[len(expected):]
            assert evicted == expected
            evicted_total += len(evicted)
        assert window.turns == oracle
    assert pushed == evicted_total + len(window.turns)
    _report(4, "10,000 randomized STM ops match the slicing oracle with "
               "exact eviction accounting")


# ---------------------------------------------------------------- criterion 5


def test_c5_bounded_growth_under_prune(tmp_path):
    clock = ManualClock(1_700_000_000_000)
    engine = Orchestrator(tmp_path / "store", clock=clock,
                          config=EngineConfig(consolidation_threshold=10_000,
                                              max_entities=200))
    budget = PruneBudget(max_entities=200, max_relations=2_000)
    core_names = [f"coreowner{k}" for k in range(5)]
    try:
        for k, name in enumerate(core_names):
            engine.add(f"My name is Coreowner{k}", session_id="core", turn_index=k)
        engine.consolidate()
        for ent in engine.graph.entities():
            if ent.canonical_name in core_names:
                assert MemoryKind.CORE in ent.kinds

        prunes = 0
        for i in range(2_000):
            engine.add(f"Person{i} visited Place{i}", session_id="stream",
                       turn_index=i)
            clock.advance(60_000)
            if (i + 1) % 100 == 0:
                engine.consolidate()
                engine.prune(budget)
                prunes += 1
                assert engine.graph.stats().total_entities <= 200
                live = {e.canonical_name for e in engine.graph.entities()}
                assert set(core_names) <= live
        assert prunes == 20
    finally:
        engine.close()
    _report(5, "entity count ≤ 200 after each of 20 prunes; all core entities kept")


# ---------------------------------------------------------------- criterion 6


def _replay_ops(base) -> dict:
    """Drive one fixed operation log through the HTTP surface and collect
    every observable byte produced."""
    clock = ManualClock(1_700_000_000_000)
    engine = Orchestrator(base / "store", clock=clock,
                          config=EngineConfig(consolidation_threshold=10_000))
    out = {"http": [], "snapshot": b"", "export": b"", "manifest": b""}
    cwd = os.getcwd()
    os.chdir(base)
    try:
        with TestClient(create_app(engine)) as client:
            for i in range(40):
                r = client.post("/v1/memory", json={
                    "content": f"Actor{i % 9} filmed Scene{i % 13}",
                    "session_id": f"s{i % 3}", "turn_index": i // 3})
                out["http"].append(r.content)
                clock.advance(750)
            out["http"].append(client.post("/v1/consolidate").content)
            out["http"].append(client.patch("/v1/memory/5", json={
                "correction": "Actor5 reshot Scene5"}).content)
            out["http"].append(client.delete("/v1/memory/12").content)
            out["http"].append(client.post("/v1/consolidate").content)
            for q in ("Scene1", "Actor7", "Scene12"):
                out["http"].append(client.get(
                    "/v1/query", params={"q": q, "session": "cold"}).content)
            out["http"].append(client.post("/v1/prune").content)
            out["http"].append(client.post(
                "/v1/export", json={"out": "round.jsonl",
                                    "domain_tag": "film"}).content)
            out["http"].append(client.get("/v1/stats").content)
            out["snapshot"] = engine.graph.snapshot_bytes()
        out["export"] = (base / "round.jsonl").read_bytes()
        out["manifest"] = (base / "round.jsonl.manifest").read_bytes()
    finally:
        os.chdir(cwd)
    return out


def test_c6_determinism_replay(tmp_path):
    first = _replay_ops(tmp_path / "a")
    second = _replay_ops(tmp_path / "b")
    assert first["snapshot"] == second["snapshot"]
    assert first["export"] == second["export"]
    assert first["manifest"] == second["manifest"]
    assert first["http"] == second["http"]
    _report(6, "replayed op log is byte-identical: graph snapshot, export file, "
               f"{len(first['http'])} HTTP responses")


# ---------------------------------------------------------------- criterion 7


def test_c7_export_exactly_once_round_trip(tmp_path, clock):
    recorder = TraceRecorder(tmp_path, clock=clock)
    manifests = []
    files = []
    n = 0
    for round_no in range(1, 4):
        for _ in range(100):
            recorder.record_trace(f"question {n}", None, f"evidence {n}")
            n += 1
        path = tmp_path / f"round_{round_no}.jsonl"
        manifests.append(recorder.export_round(path, domain_tag="bulk"))
        files.append(path)
        clock.advance(3_600_000)

    assert [m.round for m in manifests] == [1, 2, 3]
    assert [m.pair_count for m in manifests] == [100, 100, 100]

    seen: list[str] = []
    for path in files:
        records = read_training_file(path)
        seen.extend(rec["trace_id"] for rec in records)
        rebuilt = "".join(
            json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n"
            for rec in records).encode("utf-8")
        assert rebuilt == path.read_bytes()
    assert len(seen) == 300
    assert len(set(seen)) == 300
    assert set(seen) == {f"t{i:08d}" for i in range(300)}
    recorder.close()
    _report(7, "300 traces over 3 rounds: exactly-once ids, byte-identical "
               "loader round-trip, manifest rounds 1,2,3")


# ---------------------------------------------------------------- criterion 8


def test_c8_prompt_format_goldens():
    assert format_prompt("What is the capital of France?", ["Paris", "Lyon"]) == \
        "Question: What is the capital of France? Choices: Paris, Lyon"
    assert format_prompt("Name the pet", ["Milo"]) == \
        "Question: Name the pet Choices: Milo"
    assert format_prompt("Who wrote it?", ["a", "b", "c", "d"]) == \
        "Question: Who wrote it? Choices: a, b, c, d"
    # the Choices segment is omitted entirely when there are no choices
    assert format_prompt("Open-ended question", None) == \
        "Question: Open-ended question"
    assert format_prompt("Open-ended question", []) == \
        "Question: Open-ended question"
    _report(8, "prompt template goldens match, including choice separator "
               "and omission rules")


# ----------------------------------------------------- parametric echo stub


def test_parametric_route_via_echo_stub(tmp_path, clock):
    calls = []

    def echo_stub(prompt: str):
        calls.append(prompt)
        return f"echo: {prompt}", 0

    engine = Orchestrator(tmp_path / "store", clock=clock, parametric_fn=echo_stub)
    try:
        engine.domain_tag = "geography trivia"
        result = engine.retrieve("trivia: largest ocean?",
                                 choices=["Pacific", "Atlantic"])
        assert result.path == Path_.PARAMETRIC
        assert calls == ["Question: trivia: largest ocean? Choices: Pacific, Atlantic"]
        assert result.answer.startswith("echo: ")
        assert result.staleness_rounds == 0
    finally:
        engine.close()
