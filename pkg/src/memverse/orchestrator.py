"""Central rule-based controller: unified add/update/delete/retrieve,
STM-vs-LTM-vs-parametric routing, memory-kind classification, and the
consolidation / prune / distill schedules.

Behavior is a pure function of (config, persisted state, injected clock):
there are no trainable parameters and no wall-clock reads inside operations.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Optional

from .chunk_store import ChunkStore
from .config import EngineConfig
from .distill import TraceRecorder, format_prompt
from .errors import EmptyContent, NotFound, StoreLocked
from .extractor import RuleBackend, canonicalize
from .ingest import CaptionerConfig, CaptionerRegistry
from .ltm_graph import LtmGraph, PruneBudget, PruneReport
from .retrieval import (
    FullScanOracle,
    RetrievalParams,
    RetrievalResult,
    Retriever,
    tokenize,
)
from .stm import StmWindow, Turn
from .types import ChunkId, MediaRef, MemoryKind, Modality, SystemClock

_PRONOUNS = {"i", "me", "my", "mine", "we", "us", "our", "you", "your", "yours"}
_COPULAR = re.compile(r"\b(is|are|was|were)\b")
_CAPRUN = re.compile(r"\b[A-Z][\w\-]*(?:\s+[A-Z][\w\-]*)*")


class Path_(str, Enum):
    STM_HIT = "stm_hit"
    LTM_RETRIEVAL = "ltm_retrieval"
    PARAMETRIC = "parametric"


@dataclass
class RoutingDecision:
    path: Path_
    reason: str


@dataclass
class Action:
    kind: str  # consolidate | prune | distill_export
    ok: bool
    detail: str = ""


@dataclass
class OpResult:
    op: str
    path: Optional[Path_] = None
    reason: str = ""
    chunk_id: Optional[ChunkId] = None
    answer: str = ""
    retrieval: Optional[RetrievalResult] = None
    accesses: int = 0
    staleness_rounds: Optional[int] = None
    removed_entities: int = 0
    removed_relations: int = 0
    dangling_repaired: int = 0


class Orchestrator:
    """One orchestrator per store directory; mutating calls are serialized."""

    def __init__(self, store_dir: str | Path, config: Optional[EngineConfig] = None,
                 clock=None, backend=None, embedder=None,
                 parametric_fn: Optional[Callable[[str], tuple[str, int]]] = None,
                 acquire_lock: bool = True):
        self.config = config or EngineConfig()
        self.clock = clock or SystemClock()
        self.store_dir = Path(store_dir)
        self.store_dir.mkdir(parents=True, exist_ok=True)

        self._lock_path = self.store_dir / "LOCK"
        self._owns_lock = False
        if acquire_lock:
            try:
                fd = os.open(self._lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
                os.write(fd, str(os.getpid()).encode("ascii"))
                os.close(fd)
                self._owns_lock = True
            except FileExistsError:
                raise StoreLocked(f"store {self.store_dir} is owned by another process")

        self._mutex = threading.RLock()
        self.store = ChunkStore(self.store_dir, clock=self.clock)
        snapshot_path = self.store_dir / "graph.snapshot"
        if snapshot_path.exists():
            self.graph = LtmGraph.restore(snapshot_path, self.store, clock=self.clock,
                                          lambda_per_day=self.config.lambda_per_day)
        else:
            self.graph = LtmGraph(self.store, clock=self.clock,
                                  lambda_per_day=self.config.lambda_per_day)
        self.backend = backend or RuleBackend()
        self.retriever = Retriever(
            self.graph, self.store, embedder=embedder,
            params=RetrievalParams(
                top_m=self.config.top_m, hop_limit=self.config.hops,
                context_budget=self.config.context_budget,
                alpha=self.config.alpha, beta=self.config.beta))
        self.recorder = TraceRecorder(self.store_dir / "distill", clock=self.clock)
        self.captioners = CaptionerRegistry(clock=self.clock)
        for modality in (Modality.IMAGE, Modality.AUDIO, Modality.VIDEO, Modality.TEXT):
            self.captioners.register_captioner(CaptionerConfig(modality=modality))
        self.parametric_fn = parametric_fn

        self._windows: dict[str, StmWindow] = {}
        self.pending: list[int] = []  # chunk sequences awaiting consolidation
        self.last_consolidation = self.clock.now_ms()
        self.last_prune = self.clock.now_ms()
        self.last_distill = self.clock.now_ms()
        self.domain_tag = self.config.extra.get("distill.domain_tag", "")
        self._load_state()

    # -- persistence of scheduler state --------------------------------------

    def _state_path(self) -> Path:
        return self.store_dir / "scheduler.json"

    def _load_state(self) -> None:
        path = self._state_path()
        if not path.exists():
            return
        state = json.loads(path.read_text(encoding="utf-8"))
        self.pending = [s for s in state.get("pending", []) if self.store.exists_live(s)]
        self.last_consolidation = state.get("last_consolidation", self.last_consolidation)
        self.last_prune = state.get("last_prune", self.last_prune)
        self.last_distill = state.get("last_distill", self.last_distill)
        self.domain_tag = state.get("domain_tag", self.domain_tag)
        for session_id, turns in state.get("stm", {}).items():
            window = self._window(session_id)
            for t in turns:
                window.push(Turn(chunk_id=ChunkId.from_dict(t["chunk_id"]),
                                 query_text=t["query_text"], timestamp=t["timestamp"]))

    def _save_state(self) -> None:
        state = {
            "pending": self.pending,
            "last_consolidation": self.last_consolidation,
            "last_prune": self.last_prune,
            "last_distill": self.last_distill,
            "domain_tag": self.domain_tag,
            "stm": {
                session_id: [
                    {"chunk_id": t.chunk_id.to_dict(), "query_text": t.query_text,
                     "timestamp": t.timestamp}
                    for t in window.turns
                ]
                for session_id, window in sorted(self._windows.items())
            },
        }
        self._state_path().write_text(
            json.dumps(state, sort_keys=True, separators=(",", ":")), encoding="utf-8")

    def _window(self, session_id: str) -> StmWindow:
        if session_id not in self._windows:
            self._windows[session_id] = StmWindow(self.config.stm_capacity)
        return self._windows[session_id]

    # -- classification and routing -------------------------------------------

    def classify(self, content: str) -> MemoryKind:
        """Rule cascade: core lexicon match -> core; copular fact with no
        first/second-person pronoun -> semantic; otherwise episodic."""
        low = canonicalize(content)
        if any(phrase in low for phrase in self.config.core_lexicon):
            return MemoryKind.CORE
        tokens = set(tokenize(low))
        if not (tokens & _PRONOUNS) and _COPULAR.search(low):
            return MemoryKind.SEMANTIC
        return MemoryKind.EPISODIC

    def _focal_tokens(self, query: str) -> set[str]:
        runs = _CAPRUN.findall(query)
        candidates = [r for r in runs
                      if canonicalize(r) not in {"what", "who", "when", "where",
                                                 "why", "how", "which", "the", "a", "an"}]
        if candidates:
            longest = max(candidates, key=len)
            return set(tokenize(longest))
        return set(tokenize(query))

    def route(self, query: str, path_hint: Optional[str] = None,
              session_id: Optional[str] = None) -> RoutingDecision:
        if path_hint:
            return RoutingDecision(path=Path_(path_hint), reason="hint override")
        focal = self._focal_tokens(query)
        if session_id is not None:
            windows = [self._windows[session_id]] if session_id in self._windows else []
        else:
            windows = [self._windows[s] for s in sorted(self._windows)]
        window_tokens: set[str] = set()
        for window in windows:
            window_tokens |= set(tokenize(window.window_text()))
        if focal and window_tokens and focal <= window_tokens:
            return RoutingDecision(path=Path_.STM_HIT,
                                   reason="focal tokens present in STM window")
        if self.parametric_fn is not None and self.domain_tag:
            tag_tokens = set(tokenize(self.domain_tag))
            if tag_tokens & set(tokenize(query)):
                return RoutingDecision(path=Path_.PARAMETRIC,
                                       reason="domain tag matches query")
        return RoutingDecision(path=Path_.LTM_RETRIEVAL, reason="default slow path")

    # -- unified operations -----------------------------------------------------

    def add(self, content: str, session_id: str, turn_index: int,
            media: Optional[list[MediaRef]] = None,
            kind_hint: Optional[MemoryKind] = None) -> OpResult:
        with self._mutex:
            media = list(media or [])
            if (not content or not content.strip()) and media:
                # media-only add: caption first, then store with the ref attached
                content = " | ".join(self.captioners.describe(m).text for m in media)
            if not content or not content.strip():
                raise EmptyContent("add requires content or media")
            kind = kind_hint or self.classify(content)
            cid = self.store.put_chunk(content, session_id, turn_index,
                                       media=media, kind_hint=kind)
            self._window(session_id).push(
                Turn(chunk_id=cid, query_text=content, timestamp=self.clock.now_ms()))
            self.pending.append(cid.sequence)
            self._save_state()
            return OpResult(op="add", chunk_id=cid)

    def update(self, sequence: int, correction: str) -> OpResult:
        """Supersession chain: append the correction as a new chunk, tombstone
        the old one with the superseded flag, and repair graph provenance."""
        with self._mutex:
            old = self.store.get_chunk(sequence)
            turns = self.store.list_session(old.session_id)
            next_turn = max((c.turn_index for c in turns), default=-1) + 1
            kind = old.kind_hint or self.classify(correction)
            new_id = self.store.put_chunk(correction, old.session_id, next_turn,
                                          media=list(old.media), kind_hint=kind,
                                          supersedes=sequence)
            self.store.tombstone(sequence, superseded=True)
            self.graph.repair_provenance(sequence)
            # keep the fast path consistent: superseded text leaves the window
            replacement = Turn(chunk_id=new_id, query_text=correction,
                               timestamp=self.clock.now_ms())
            for window in self._windows.values():
                window.replace(sequence, replacement)
            self.pending = [s for s in self.pending if s != sequence]
            self.pending.append(new_id.sequence)
            self.retriever.rebuild_index()
            self._save_state()
            return OpResult(op="update", chunk_id=new_id)

    def delete_chunk(self, sequence: int) -> OpResult:
        with self._mutex:
            dangling = self.store.tombstone(sequence, ref_counter=self.graph.count_chunk_refs)
            report = self.graph.repair_provenance(sequence)
            self.pending = [s for s in self.pending if s != sequence]
            self.retriever.rebuild_index()
            self._save_state()
            return OpResult(op="delete", dangling_repaired=dangling,
                            removed_entities=len(report.removed_entities),
                            removed_relations=len(report.removed_relations))

    def delete_entity(self, entity_id: int) -> OpResult:
        with self._mutex:
            report = self.graph.delete_entity(entity_id)
            self.retriever.rebuild_index()
            return OpResult(op="delete",
                            removed_entities=len(report.removed_entities),
                            removed_relations=len(report.removed_relations))

    def retrieve(self, query: str, params: Optional[RetrievalParams] = None,
                 path_hint: Optional[str] = None, session_id: Optional[str] = None,
                 choices: Optional[list[str]] = None) -> OpResult:
        with self._mutex:
            decision = self.route(query, path_hint=path_hint, session_id=session_id)
            if decision.path == Path_.STM_HIT:
                if session_id is not None and session_id in self._windows:
                    text = self._windows[session_id].window_text()
                else:
                    text = "\n".join(self._windows[s].window_text()
                                     for s in sorted(self._windows))
                return OpResult(op="retrieve", path=decision.path,
                                reason=decision.reason, answer=text, accesses=0)
            if decision.path == Path_.PARAMETRIC:
                if self.parametric_fn is None:
                    raise NotFound("no parametric endpoint registered")
                prompt = format_prompt(query, choices)
                text, trained_round = self.parametric_fn(prompt)
                staleness = self.recorder.current_round - 1 - trained_round
                return OpResult(op="retrieve", path=decision.path,
                                reason=decision.reason, answer=text,
                                staleness_rounds=staleness)
            result = self.retriever.retrieve(query, params=params)
            # recorder skips (and counts) empty-evidence traces itself
            self.recorder.record_trace(query, choices, result.context)
            return OpResult(op="retrieve", path=decision.path, reason=decision.reason,
                            answer=result.context, retrieval=result,
                            accesses=result.accesses)

    # -- schedules ----------------------------------------------------------------

    def consolidate(self) -> Action:
        """Drain the pending queue through extraction into the graph.

        Chunks are grouped by classified kind and processed in batches; a
        failing batch leaves itself and everything after it queued.
        """
        with self._mutex:
            queue = [s for s in self.pending if self.store.exists_live(s)]
            if not queue:
                self.pending = []
                self.last_consolidation = self.clock.now_ms()
                self._save_state()
                return Action(kind="consolidate", ok=True, detail="queue empty")
            groups: dict[MemoryKind, list] = {}
            for seq in queue:
                chunk = self.store.get_chunk(seq)
                kind = chunk.kind_hint or self.classify(chunk.content)
                groups.setdefault(kind, []).append(chunk)
            consolidated: set[int] = set()
            failure = None
            for kind in sorted(groups, key=lambda k: k.value):
                chunks = groups[kind]
                for start in range(0, len(chunks), self.config.batch_size):
                    batch = chunks[start:start + self.config.batch_size]
                    try:
                        result = self.backend.extract(batch, default_kind=kind)
                        self.graph.merge_extraction(result)
                        consolidated |= {c.id.sequence for c in batch}
                    except Exception as exc:  # failed batch stays queued
                        failure = exc
                        break
                if failure:
                    break
            self.pending = [s for s in self.pending if s not in consolidated]
            if failure is None:
                self.last_consolidation = self.clock.now_ms()
            self.retriever.rebuild_index()
            self._save_state()
            if failure is not None:
                return Action(kind="consolidate", ok=False, detail=str(failure))
            return Action(kind="consolidate", ok=True,
                          detail=f"consolidated {len(consolidated)} chunks")

    def prune(self, budget: Optional[PruneBudget] = None) -> PruneReport:
        with self._mutex:
            budget = budget or PruneBudget(max_entities=self.config.max_entities,
                                           max_relations=self.config.max_relations)
            report = self.graph.prune(budget)
            self.last_prune = self.clock.now_ms()
            self.retriever.rebuild_index()
            self._save_state()
            return report

    def export_round(self, path: Optional[str | Path] = None,
                     domain_tag: Optional[str] = None):
        with self._mutex:
            tag = domain_tag if domain_tag is not None else self.domain_tag
            if path is None:
                exports = self.store_dir / "exports"
                exports.mkdir(exist_ok=True)
                path = exports / f"round_{self.recorder.current_round:04d}.jsonl"
            snapshot_digest = hashlib.sha256(self.graph.snapshot_bytes()).hexdigest()
            manifest = self.recorder.export_round(
                path, domain_tag=tag, source_graph_snapshot=snapshot_digest)
            self.domain_tag = tag
            self.last_distill = self.clock.now_ms()
            self._save_state()
            return manifest, Path(path)

    def tick(self, now: Optional[int] = None) -> list[Action]:
        """Run every schedule whose trigger fired; returns executed actions."""
        with self._mutex:
            now = self.clock.now_ms() if now is None else now
            actions: list[Action] = []
            due_by_count = len(self.pending) >= self.config.consolidation_threshold
            due_by_time = (now - self.last_consolidation
                           >= self.config.consolidation_period_s * 1000)
            if self.pending and (due_by_count or due_by_time):
                actions.append(self.consolidate())
            if now - self.last_prune >= self.config.prune_period_s * 1000:
                report = self.prune()
                actions.append(Action(
                    kind="prune", ok=True,
                    detail=f"removed {len(report.removed_entities)} entities, "
                           f"{len(report.removed_relations)} relations"))
            if (now - self.last_distill >= self.config.distill_period_s * 1000
                    and self.recorder.pending_count() >= self.config.distill_min_pairs):
                try:
                    manifest, path = self.export_round()
                    actions.append(Action(kind="distill_export", ok=True,
                                          detail=f"round {manifest.round} -> {path}"))
                except Exception as exc:
                    actions.append(Action(kind="distill_export", ok=False, detail=str(exc)))
            return actions

    # -- maintenance ---------------------------------------------------------------

    def full_scan_oracle(self) -> FullScanOracle:
        return FullScanOracle(self.store)

    def snapshot_graph(self) -> Path:
        path = self.store_dir / "graph.snapshot"
        self.graph.snapshot(path)
        return path

    def close(self) -> None:
        with self._mutex:
            self.snapshot_graph()
            self._save_state()
            self.recorder.close()
            self.store.close()
            if self._owns_lock and self._lock_path.exists():
                self._lock_path.unlink()
                self._owns_lock = False

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
