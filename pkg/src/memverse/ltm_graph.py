"""Long-term memory graph: three kind-tagged subgraphs over a shared entity
namespace, with chunk provenance, activation, pruning and snapshots.

Entities are deduplicated by canonical name; relations by (src, dst, label).
Rather than three disjoint graphs, each element carries a set of memory
kinds, and the per-kind view is "elements whose kinds contain k".
"""

from __future__ import annotations

import json
import math
import threading
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

from .chunk_store import ChunkStore
from .errors import (
    BudgetInfeasible,
    DanglingChunk,
    FormatVersionMismatch,
    NotFound,
    StorageError,
)
from .extractor import ExtractionResult
from .types import Chunk, ChunkId, MediaRef, MemoryKind, SystemClock

SNAPSHOT_VERSION = "memverse-graph/1"
ACTIVATION_BONUS = 1.0
DEFAULT_LAMBDA_PER_DAY = 1.0 / 30.0
_MS_PER_DAY = 86400_000.0


@dataclass
class Entity:
    id: int
    canonical_name: str
    display_name: str
    etype: str
    kinds: set[MemoryKind]
    provenance: set[ChunkId]
    salience: float
    last_activated: int
    created_at: int


@dataclass
class Relation:
    id: int
    src: int
    dst: int
    label: str
    kinds: set[MemoryKind]
    provenance: set[ChunkId]
    salience: float
    last_activated: int


@dataclass
class GraphDelta:
    entities_added: int = 0
    entities_updated: int = 0
    relations_added: int = 0
    relations_updated: int = 0


@dataclass
class Activation:
    seed: int
    chunks: list[Chunk]
    media: list[MediaRef]
    repair: list[ChunkId] = field(default_factory=list)  # dangling provenance


@dataclass
class Subgraph:
    entities: list[Entity]
    relations: list[Relation]


@dataclass
class PruneBudget:
    max_entities: int
    max_relations: int
    min_salience: float = 0.0
    protected_kinds: frozenset = frozenset({MemoryKind.CORE})


@dataclass
class PruneReport:
    removed_entities: list[int] = field(default_factory=list)
    removed_relations: list[int] = field(default_factory=list)


@dataclass
class GraphStats:
    entity_count: dict
    relation_count: dict
    chunk_ref_count: dict
    total_entities: int
    total_relations: int
    total_bytes_estimate: int


class LtmGraph:
    """Single-writer/multi-reader knowledge graph tied to a chunk store."""

    def __init__(self, store: ChunkStore, clock=None,
                 lambda_per_day: float = DEFAULT_LAMBDA_PER_DAY):
        self._store = store
        self._clock = clock or SystemClock()
        self._lock = threading.RLock()
        self.lambda_per_day = lambda_per_day
        self._entities: dict[int, Entity] = {}
        self._by_name: dict[str, int] = {}
        self._relations: dict[int, Relation] = {}
        self._by_triple: dict[tuple, int] = {}
        self._adjacency: dict[int, set[int]] = {}  # entity id -> relation ids
        self._next_entity = 0
        self._next_relation = 0

    # -- merge ---------------------------------------------------------------

    def merge_extraction(self, result: ExtractionResult) -> GraphDelta:
        """Upsert an extraction into the graph; atomic, rejects dangling chunks."""
        with self._lock:
            cited = set()
            for ent in result.entities:
                cited |= ent.source_chunks
            for rel in result.relations:
                cited |= rel.source_chunks
            dead = sorted(c.sequence for c in cited if not self._store.exists_live(c))
            if dead:
                raise DanglingChunk(f"extraction cites missing/tombstoned chunks {dead}")

            now = self._clock.now_ms()
            delta = GraphDelta()
            for ent in result.entities:
                eid = self._by_name.get(ent.name)
                if eid is None:
                    eid = self._next_entity
                    self._next_entity += 1
                    self._entities[eid] = Entity(
                        id=eid, canonical_name=ent.name, display_name=ent.display_name,
                        etype=ent.etype, kinds={ent.kind},
                        provenance=set(ent.source_chunks),
                        salience=float(len(ent.source_chunks)),
                        last_activated=now, created_at=now)
                    self._by_name[ent.name] = eid
                    self._adjacency[eid] = set()
                    delta.entities_added += 1
                else:
                    existing = self._entities[eid]
                    new_chunks = set(ent.source_chunks) - existing.provenance
                    changed = bool(new_chunks) or ent.kind not in existing.kinds
                    existing.provenance |= new_chunks
                    existing.kinds.add(ent.kind)
                    existing.salience += len(new_chunks)
                    if changed:
                        delta.entities_updated += 1
            for rel in result.relations:
                src = self._by_name[rel.src_name]
                dst = self._by_name[rel.dst_name]
                triple = (src, dst, rel.label)
                rid = self._by_triple.get(triple)
                if rid is None:
                    rid = self._next_relation
                    self._next_relation += 1
                    self._relations[rid] = Relation(
                        id=rid, src=src, dst=dst, label=rel.label,
                        kinds={rel.kind}, provenance=set(rel.source_chunks),
                        salience=float(len(rel.source_chunks)), last_activated=now)
                    self._by_triple[triple] = rid
                    self._adjacency[src].add(rid)
                    self._adjacency[dst].add(rid)
                    delta.relations_added += 1
                else:
                    existing_rel = self._relations[rid]
                    new_chunks = set(rel.source_chunks) - existing_rel.provenance
                    changed = bool(new_chunks) or rel.kind not in existing_rel.kinds
                    existing_rel.provenance |= new_chunks
                    existing_rel.kinds.add(rel.kind)
                    existing_rel.salience += len(new_chunks)
                    if changed:
                        delta.relations_updated += 1
            return delta

    # -- lookups ---------------------------------------------------------------

    def entity(self, entity_id: int) -> Entity:
        ent = self._entities.get(entity_id)
        if ent is None:
            raise NotFound(f"entity {entity_id} not in graph")
        return ent

    def entity_by_name(self, canonical_name: str) -> Entity:
        eid = self._by_name.get(canonical_name)
        if eid is None:
            raise NotFound(f"entity {canonical_name!r} not in graph")
        return self._entities[eid]

    def relation(self, relation_id: int) -> Relation:
        rel = self._relations.get(relation_id)
        if rel is None:
            raise NotFound(f"relation {relation_id} not in graph")
        return rel

    def entities(self) -> list[Entity]:
        return [self._entities[i] for i in sorted(self._entities)]

    def relations(self) -> list[Relation]:
        return [self._relations[i] for i in sorted(self._relations)]

    # -- activation --------------------------------------------------------------

    def activate(self, seed: int, is_relation: bool = False,
                 bonus: float = ACTIVATION_BONUS) -> Activation:
        """Resolve a graph element back to its supporting chunks and media."""
        with self._lock:
            element = self.relation(seed) if is_relation else self.entity(seed)
            chunks, repair = [], []
            for cid in sorted(element.provenance, key=lambda c: c.sequence):
                if self._store.exists_live(cid):
                    chunks.append(self._store.get_chunk(cid))
                else:
                    repair.append(cid)
            media = []
            seen = set()
            for chunk in chunks:
                for m in chunk.media:
                    if m not in seen:
                        seen.add(m)
                        media.append(m)
            element.last_activated = self._clock.now_ms()
            element.salience += bonus
            return Activation(seed=seed, chunks=chunks, media=media, repair=repair)

    def neighbors(self, seed: int, hop_limit: int,
                  kinds: set[MemoryKind] | None = None) -> Subgraph:
        """BFS closure within hop_limit, edges filtered by kind intersection.

        Deterministic: frontier expansion ordered by (hop distance, entity id).
        """
        if hop_limit < 1:
            raise ValueError("hop_limit must be >= 1")
        self.entity(seed)  # NotFound if absent
        kinds = kinds or set(MemoryKind)
        dist = {seed: 0}
        used_relations: set[int] = set()
        frontier = deque([seed])
        while frontier:
            eid = frontier.popleft()
            if dist[eid] >= hop_limit:
                continue
            for rid in sorted(self._adjacency.get(eid, ())):
                rel = self._relations[rid]
                if not (rel.kinds & kinds):
                    continue
                used_relations.add(rid)
                other = rel.dst if rel.src == eid else rel.src
                if other not in dist:
                    dist[other] = dist[eid] + 1
                    frontier.append(other)
        order = sorted(dist, key=lambda e: (dist[e], e))
        return Subgraph(entities=[self._entities[e] for e in order],
                        relations=[self._relations[r] for r in sorted(used_relations)])

    # -- forgetting -----------------------------------------------------------

    def retention_score(self, salience: float, last_activated: int,
                        now: int | None = None) -> float:
        now = self._clock.now_ms() if now is None else now
        age_days = max(0.0, (now - last_activated) / _MS_PER_DAY)
        return salience * math.exp(-self.lambda_per_day * age_days)

    def _protected(self, kinds: set[MemoryKind], protected: frozenset) -> bool:
        # any protected kind shields the element (core facts never pruned)
        return bool(kinds & set(protected))

    def prune(self, policy: PruneBudget) -> PruneReport:
        if policy.max_entities < 1 or policy.max_relations < 1:
            raise ValueError("prune budgets must be positive")
        with self._lock:
            now = self._clock.now_ms()
            report = PruneReport()

            protected_entities = [e for e in self._entities.values()
                                  if self._protected(e.kinds, policy.protected_kinds)]
            protected_relations = [r for r in self._relations.values()
                                   if self._protected(r.kinds, policy.protected_kinds)]
            if len(protected_entities) > policy.max_entities or \
                    len(protected_relations) > policy.max_relations:
                raise BudgetInfeasible("protected elements alone exceed the budget")

            def score_key(element):
                return (self.retention_score(element.salience, element.last_activated, now),
                        element.id)

            removable = sorted(
                (e for e in self._entities.values()
                 if not self._protected(e.kinds, policy.protected_kinds)),
                key=score_key)
            to_remove = {e.id for e in removable
                         if self.retention_score(e.salience, e.last_activated, now)
                         < policy.min_salience}
            overflow = len(self._entities) - len(to_remove) - policy.max_entities
            for ent in removable:
                if overflow <= 0:
                    break
                if ent.id not in to_remove:
                    to_remove.add(ent.id)
                    overflow -= 1
            for eid in sorted(to_remove):
                self._remove_entity(eid, report)

            rel_removable = sorted(
                (r for r in self._relations.values()
                 if not self._protected(r.kinds, policy.protected_kinds)),
                key=score_key)
            rel_remove = [r.id for r in rel_removable
                          if self.retention_score(r.salience, r.last_activated, now)
                          < policy.min_salience]
            overflow = len(self._relations) - len(rel_remove) - policy.max_relations
            for rel in rel_removable:
                if overflow <= 0:
                    break
                if rel.id not in rel_remove:
                    rel_remove.append(rel.id)
                    overflow -= 1
            for rid in sorted(set(rel_remove)):
                if rid in self._relations:
                    self._remove_relation(rid, report)
            return report

    def _remove_relation(self, rid: int, report: PruneReport) -> None:
        rel = self._relations.pop(rid)
        self._by_triple.pop((rel.src, rel.dst, rel.label), None)
        for eid in (rel.src, rel.dst):
            self._adjacency.get(eid, set()).discard(rid)
        report.removed_relations.append(rid)

    def _remove_entity(self, eid: int, report: PruneReport) -> None:
        ent = self._entities.pop(eid)
        self._by_name.pop(ent.canonical_name, None)
        for rid in sorted(self._adjacency.pop(eid, set())):
            if rid in self._relations:
                self._remove_relation(rid, report)
        report.removed_entities.append(eid)

    def delete_entity(self, entity_id: int) -> PruneReport:
        """Remove an entity and its incident relations (unified delete op)."""
        with self._lock:
            self.entity(entity_id)  # NotFound if absent
            report = PruneReport()
            self._remove_entity(entity_id, report)
            return report

    # -- provenance repair ------------------------------------------------------

    def count_chunk_refs(self, sequence: int) -> int:
        """How many provenance entries reference the chunk sequence."""
        count = 0
        for ent in self._entities.values():
            count += sum(1 for c in ent.provenance if c.sequence == sequence)
        for rel in self._relations.values():
            count += sum(1 for c in rel.provenance if c.sequence == sequence)
        return count

    def repair_provenance(self, sequence: int) -> PruneReport:
        """Drop provenance entries for a dead chunk; remove elements whose
        provenance would become empty (and relations of removed entities)."""
        with self._lock:
            report = PruneReport()
            for rid in sorted(self._relations):
                rel = self._relations.get(rid)
                if rel is None:
                    continue
                rel.provenance = {c for c in rel.provenance if c.sequence != sequence}
                if not rel.provenance:
                    self._remove_relation(rid, report)
            for eid in sorted(self._entities):
                ent = self._entities.get(eid)
                if ent is None:
                    continue
                ent.provenance = {c for c in ent.provenance if c.sequence != sequence}
                if not ent.provenance:
                    self._remove_entity(eid, report)
            return report

    # -- stats / persistence ------------------------------------------------------

    def stats(self) -> GraphStats:
        entity_count = {k.value: 0 for k in MemoryKind}
        relation_count = {k.value: 0 for k in MemoryKind}
        chunk_ref_count = {k.value: 0 for k in MemoryKind}
        total_bytes = 0
        for ent in self._entities.values():
            total_bytes += len(ent.canonical_name) + len(ent.display_name) + 64
            for k in ent.kinds:
                entity_count[k.value] += 1
                chunk_ref_count[k.value] += len(ent.provenance)
        for rel in self._relations.values():
            total_bytes += len(rel.label) + 64
            for k in rel.kinds:
                relation_count[k.value] += 1
                chunk_ref_count[k.value] += len(rel.provenance)
        return GraphStats(entity_count=entity_count, relation_count=relation_count,
                          chunk_ref_count=chunk_ref_count,
                          total_entities=len(self._entities),
                          total_relations=len(self._relations),
                          total_bytes_estimate=total_bytes)

    def to_document(self) -> dict:
        return {
            "version": SNAPSHOT_VERSION,
            "next_entity": self._next_entity,
            "next_relation": self._next_relation,
            "entities": [
                {
                    "id": e.id, "canonical_name": e.canonical_name,
                    "display_name": e.display_name, "etype": e.etype,
                    "kinds": sorted(k.value for k in e.kinds),
                    "provenance": [c.to_dict() for c in
                                   sorted(e.provenance, key=lambda c: c.sequence)],
                    "salience": e.salience, "last_activated": e.last_activated,
                    "created_at": e.created_at,
                }
                for e in self.entities()
            ],
            "relations": [
                {
                    "id": r.id, "src": r.src, "dst": r.dst, "label": r.label,
                    "kinds": sorted(k.value for k in r.kinds),
                    "provenance": [c.to_dict() for c in
                                   sorted(r.provenance, key=lambda c: c.sequence)],
                    "salience": r.salience, "last_activated": r.last_activated,
                }
                for r in self.relations()
            ],
        }

    def snapshot_bytes(self) -> bytes:
        # canonical ordering so equal graphs serialize byte-identically
        return json.dumps(self.to_document(), sort_keys=True,
                          separators=(",", ":")).encode("utf-8")

    def snapshot(self, path: str | Path) -> None:
        try:
            Path(path).write_bytes(self.snapshot_bytes())
        except OSError as exc:
            raise StorageError(f"cannot write snapshot: {exc}")

    @classmethod
    def restore(cls, path: str | Path, store: ChunkStore, clock=None,
                lambda_per_day: float = DEFAULT_LAMBDA_PER_DAY) -> "LtmGraph":
        try:
            raw = Path(path).read_bytes()
        except OSError as exc:
            raise StorageError(f"cannot read snapshot: {exc}")
        try:
            doc = json.loads(raw.decode("utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError):
            raise FormatVersionMismatch("snapshot is not a valid graph document")
        if not isinstance(doc, dict) or doc.get("version") != SNAPSHOT_VERSION:
            raise FormatVersionMismatch(
                f"snapshot version {doc.get('version')!r}, expected {SNAPSHOT_VERSION!r}")
        graph = cls(store, clock=clock, lambda_per_day=lambda_per_day)
        try:
            for e in doc["entities"]:
                ent = Entity(
                    id=int(e["id"]), canonical_name=e["canonical_name"],
                    display_name=e["display_name"], etype=e["etype"],
                    kinds={MemoryKind(k) for k in e["kinds"]},
                    provenance={ChunkId.from_dict(c) for c in e["provenance"]},
                    salience=float(e["salience"]),
                    last_activated=int(e["last_activated"]),
                    created_at=int(e["created_at"]))
                graph._entities[ent.id] = ent
                graph._by_name[ent.canonical_name] = ent.id
                graph._adjacency[ent.id] = set()
            for r in doc["relations"]:
                rel = Relation(
                    id=int(r["id"]), src=int(r["src"]), dst=int(r["dst"]),
                    label=r["label"],
                    kinds={MemoryKind(k) for k in r["kinds"]},
                    provenance={ChunkId.from_dict(c) for c in r["provenance"]},
                    salience=float(r["salience"]),
                    last_activated=int(r["last_activated"]))
                graph._relations[rel.id] = rel
                graph._by_triple[(rel.src, rel.dst, rel.label)] = rel.id
                graph._adjacency[rel.src].add(rel.id)
                graph._adjacency[rel.dst].add(rel.id)
            graph._next_entity = int(doc["next_entity"])
            graph._next_relation = int(doc["next_relation"])
        except (KeyError, ValueError, TypeError) as exc:
            raise FormatVersionMismatch(f"snapshot structure invalid: {exc}")
        return graph

    def scan_provenance_violations(self) -> list[str]:
        """Exhaustive closure check; returns human-readable violations."""
        problems = []
        for ent in self._entities.values():
            if not ent.provenance:
                problems.append(f"entity {ent.canonical_name!r} has empty provenance")
            for cid in ent.provenance:
                if not self._store.exists_live(cid):
                    problems.append(
                        f"entity {ent.canonical_name!r} references dead chunk {cid.sequence}")
        for rel in self._relations.values():
            if not rel.provenance:
                problems.append(f"relation {rel.id} has empty provenance")
            if rel.src not in self._entities or rel.dst not in self._entities:
                problems.append(f"relation {rel.id} references pruned entity")
            for cid in rel.provenance:
                if not self._store.exists_live(cid):
                    problems.append(f"relation {rel.id} references dead chunk {cid.sequence}")
        return problems
