"""Query-time pipeline: entity matching (lexical + embedding fusion),
multi-hop expansion, provenance gathering, bounded context assembly, and
query rewriting by concatenation with retrieved text.

`accesses` counts unique chunk reads so the efficiency claim (graph
retrieval touches far fewer chunks than a full scan) is observable and
testable against the FullScanOracle.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field

import numpy as np

from .chunk_store import ChunkStore
from .errors import EmptyQuery, NotFound
from .extractor import canonicalize
from .ltm_graph import LtmGraph, Subgraph
from .types import MediaRef, MemoryKind

EMBED_DIM = 64
CONTEXT_SEPARATOR = "\n---\n"
KIND_BONUS = {MemoryKind.CORE: 0.1, MemoryKind.SEMANTIC: 0.05, MemoryKind.EPISODIC: 0.0}

_TOKEN = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    return [t.casefold() for t in _TOKEN.findall(text)]


@dataclass
class EmbeddingVector:
    values: np.ndarray
    norm: float

    def cosine(self, other: "EmbeddingVector") -> float:
        if self.norm == 0.0 or other.norm == 0.0:
            return 0.0
        return float(np.dot(self.values, other.values) / (self.norm * other.norm))


class MockEmbedder:
    """Token-hash bag projected to a fixed dimension; pure function of text."""

    dim = EMBED_DIM

    def embed(self, text: str) -> EmbeddingVector:
        values = np.zeros(self.dim, dtype=np.float64)
        for token in tokenize(text):
            digest = hashlib.sha256(token.encode("utf-8")).digest()
            index = int.from_bytes(digest[:4], "little") % self.dim
            sign = 1.0 if digest[4] & 1 else -1.0
            values[index] += sign
        norm = float(np.linalg.norm(values))
        if norm > 0.0:
            values /= norm
            norm = 1.0
        return EmbeddingVector(values=values, norm=norm)


@dataclass
class RetrievalParams:
    top_m: int = 5
    hop_limit: int = 2
    context_budget: int = 2000
    kinds: frozenset = frozenset(MemoryKind)
    alpha: float = 0.5   # lexical weight
    beta: float = 0.5    # embedding weight


@dataclass
class ScoredChunk:
    sequence: int
    score: float


@dataclass
class RetrievalResult:
    query: str
    matched_entities: list[tuple[int, float]] = field(default_factory=list)
    subgraph: Subgraph = field(default_factory=lambda: Subgraph([], []))
    chunks: list[ScoredChunk] = field(default_factory=list)
    media: list[MediaRef] = field(default_factory=list)
    context: str = ""
    accesses: int = 0


class Retriever:
    def __init__(self, graph: LtmGraph, store: ChunkStore, embedder=None,
                 params: RetrievalParams | None = None):
        self.graph = graph
        self.store = store
        self.embedder = embedder or MockEmbedder()
        self.params = params or RetrievalParams()
        self._name_vectors: dict[int, EmbeddingVector] = {}
        self._name_tokens: dict[int, list[str]] = {}
        self.rebuild_index()

    def rebuild_index(self) -> None:
        """Exclusive rebuild of the entity-name embedding index."""
        self._name_vectors = {}
        self._name_tokens = {}
        for ent in self.graph.entities():
            self._name_vectors[ent.id] = self.embedder.embed(ent.canonical_name)
            self._name_tokens[ent.id] = tokenize(ent.canonical_name)

    # -- matching -----------------------------------------------------------

    def match_entities(self, query: str, top_m: int | None = None) -> list[tuple[int, float]]:
        if not query or not query.strip():
            raise EmptyQuery("query is empty")
        top_m = top_m or self.params.top_m
        q_tokens = set(tokenize(canonicalize(query)))
        q_vec = self.embedder.embed(query)
        scored = []
        for eid, name_tokens in self._name_tokens.items():
            if eid not in self.graph._entities:
                continue
            if not name_tokens:
                continue
            lexical = len(q_tokens & set(name_tokens)) / len(name_tokens)
            embedding = self._name_vectors[eid].cosine(q_vec)
            score = self.params.alpha * lexical + self.params.beta * embedding
            if score > 0.0:
                scored.append((eid, score))
        scored.sort(key=lambda pair: (-pair[1], pair[0]))
        return scored[:top_m]

    # -- retrieval ----------------------------------------------------------

    def retrieve(self, query: str, params: RetrievalParams | None = None) -> RetrievalResult:
        params = params or self.params
        seeds = self.match_entities(query, top_m=params.top_m)
        if not seeds:
            return RetrievalResult(query=query)

        # union of per-seed neighborhoods
        entity_ids: dict[int, None] = {}
        relation_ids: dict[int, None] = {}
        for eid, _score in seeds:
            try:
                sub = self.graph.neighbors(eid, params.hop_limit, set(params.kinds))
            except NotFound:
                continue
            for ent in sub.entities:
                entity_ids.setdefault(ent.id, None)
            for rel in sub.relations:
                relation_ids.setdefault(rel.id, None)

        seed_score = dict(seeds)
        chunk_scores: dict[int, float] = {}
        chunk_objs: dict[int, object] = {}
        fetched: set[int] = set()

        def absorb(activation, element_kinds, match_score: float):
            bonus = max((KIND_BONUS[k] for k in element_kinds), default=0.0)
            for chunk in activation.chunks:
                seq = chunk.id.sequence
                if seq not in fetched:
                    fetched.add(seq)
                    chunk_objs[seq] = chunk
                    chunk_scores[seq] = bonus
                else:
                    chunk_scores[seq] = max(chunk_scores[seq], bonus)
                chunk_scores[seq] += match_score

        for eid in sorted(entity_ids):
            ent = self.graph.entity(eid)
            activation = self.graph.activate(eid)
            absorb(activation, ent.kinds, seed_score.get(eid, 0.0))
        for rid in sorted(relation_ids):
            rel = self.graph.relation(rid)
            activation = self.graph.activate(rid, is_relation=True)
            absorb(activation, rel.kinds, 0.0)

        ranked = sorted(chunk_scores.items(), key=lambda kv: (-kv[1], kv[0]))
        scored_chunks = [ScoredChunk(sequence=seq, score=score) for seq, score in ranked]

        # context assembly: whole chunks only, within the character budget
        parts: list[str] = []
        used = 0
        for sc in scored_chunks:
            text = chunk_objs[sc.sequence].content
            cost = len(text) + (len(CONTEXT_SEPARATOR) if parts else 0)
            if used + cost > params.context_budget:
                break
            parts.append(text)
            used += cost
        context = CONTEXT_SEPARATOR.join(parts)

        media: list[MediaRef] = []
        seen_media = set()
        for sc in scored_chunks:
            for m in chunk_objs[sc.sequence].media:
                if m not in seen_media:
                    seen_media.add(m)
                    media.append(m)

        sub_entities = [self.graph.entity(e) for e in sorted(entity_ids)
                        if e in self.graph._entities]
        sub_relations = [self.graph.relation(r) for r in sorted(relation_ids)
                         if r in self.graph._relations]
        return RetrievalResult(
            query=query,
            matched_entities=seeds,
            subgraph=Subgraph(entities=sub_entities, relations=sub_relations),
            chunks=scored_chunks,
            media=media,
            context=context,
            accesses=len(fetched),
        )

    def rewrite_query(self, query: str, params: RetrievalParams | None = None) -> str:
        result = self.retrieve(query, params=params)
        if not result.context:
            return query
        return f"{query} {CONTEXT_SEPARATOR} {result.context}"


class FullScanOracle:
    """Brute-force baseline: reads every live chunk and ranks by raw token
    overlap with the query. Independent of the graph pipeline by design."""

    def __init__(self, store: ChunkStore):
        self.store = store

    def retrieve(self, query: str) -> tuple[list[ScoredChunk], int]:
        q_tokens = set(tokenize(query))
        scored = []
        accesses = 0
        for chunk in self.store.iter_live():
            accesses += 1
            overlap = len(q_tokens & set(tokenize(chunk.content)))
            scored.append(ScoredChunk(sequence=chunk.id.sequence, score=float(overlap)))
        scored.sort(key=lambda sc: (-sc.score, sc.sequence))
        return scored, accesses
