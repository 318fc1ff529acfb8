"""Turns chunks into compressed descriptions plus entities and typed relations.

Two interchangeable backends:
  * RuleBackend  - deterministic subject-verb-object grammar over capitalized
    token runs; pure function of its input, used as the test oracle stand-in.
  * HttpLlmBackend - chat-completion-style remote extractor whose output is
    validated against the extraction document schema and never silently
    repaired.
"""

from __future__ import annotations

import json
import re
import time
import unicodedata
from dataclasses import dataclass, field

import httpx

from .errors import BackendUnavailable, ParseError, SchemaViolation
from .types import Chunk, ChunkId, MemoryKind

DEFAULT_COMPRESSION_BUDGET = 512

# tokens never treated as entity candidates, even when capitalized
# (sentence-initial articles, pronouns, wh-words)
_STOPWORDS = {
    "a", "an", "the", "it", "he", "she", "they", "we", "i", "you", "this",
    "that", "these", "those", "what", "which", "who", "whom", "when", "where",
    "why", "how", "yes", "no", "my", "your", "his", "her", "its", "our",
    "their", "is", "was", "are", "were", "be", "been", "do", "does", "did",
    "yesterday", "today", "tomorrow", "and", "or", "but", "not",
}


def canonicalize(name: str) -> str:
    """Stable identity key: NFC, trim, collapse whitespace, case-fold."""
    text = unicodedata.normalize("NFC", name).strip()
    text = re.sub(r"\s+", " ", text)
    return text.casefold()


@dataclass(frozen=True)
class EntitySpec:
    name: str                 # canonical form
    display_name: str
    etype: str
    kind: MemoryKind
    source_chunks: frozenset  # of ChunkId


@dataclass(frozen=True)
class RelationSpec:
    src_name: str
    dst_name: str
    label: str
    kind: MemoryKind
    source_chunks: frozenset


@dataclass
class ExtractionResult:
    description: str
    entities: list[EntitySpec] = field(default_factory=list)
    relations: list[RelationSpec] = field(default_factory=list)

    def entity_names(self) -> set[str]:
        return {e.name for e in self.entities}


def _check_invariants(result: ExtractionResult, allowed: set[ChunkId] | None) -> None:
    names = result.entity_names()
    if len(names) != len(result.entities):
        raise SchemaViolation("duplicate canonical entity names")
    for ent in result.entities:
        if not ent.source_chunks:
            raise SchemaViolation(f"entity {ent.name!r} has empty source_chunks")
        if allowed is not None and not set(ent.source_chunks) <= allowed:
            raise SchemaViolation(f"entity {ent.name!r} cites chunks outside the input set")
    for rel in result.relations:
        if rel.src_name not in names or rel.dst_name not in names:
            raise SchemaViolation(f"relation {rel.label!r} references unknown entity")
        if not rel.source_chunks:
            raise SchemaViolation("relation has empty source_chunks")
        if allowed is not None and not set(rel.source_chunks) <= allowed:
            raise SchemaViolation("relation cites chunks outside the input set")


# -- rule backend ------------------------------------------------------------

_WORD = re.compile(r"[^\W_]+(?:['\-][^\W_]+)*", re.UNICODE)


def _is_entity_token(token: str) -> bool:
    return token[0].isupper() and token.casefold() not in _STOPWORDS


def _sentence_runs(sentence: str):
    """Yield alternating runs: maximal capitalized-token runs (entity
    candidates) and the lowercase gaps between them."""
    tokens = _WORD.findall(sentence)
    runs = []  # (is_entity, [tokens])
    for tok in tokens:
        flag = _is_entity_token(tok)
        if runs and runs[-1][0] == flag:
            runs[-1][1].append(tok)
        else:
            runs.append((flag, [tok]))
    return runs


class RuleBackend:
    """Deterministic SVO extractor: capitalized runs are entities, the
    lowercase run between two adjacent entities is the relation label."""

    name = "rule"

    def extract(self, chunks: list[Chunk],
                default_kind: MemoryKind = MemoryKind.EPISODIC) -> ExtractionResult:
        if not chunks:
            raise ValueError("extract requires a non-empty chunk list")
        entities: dict[str, dict] = {}
        relations: dict[tuple, dict] = {}
        triple_sentences: list[str] = []

        for chunk in chunks:
            kind = chunk.kind_hint or default_kind
            for sentence in re.split(r"[.!?]+", chunk.content):
                runs = _sentence_runs(sentence)
                ents = [(i, r[1]) for i, r in enumerate(runs) if r[0]]
                for _, toks in ents:
                    display = " ".join(toks)
                    key = canonicalize(display)
                    rec = entities.setdefault(
                        key, {"display": display, "chunks": set(), "kinds": set(), "subject": False})
                    rec["chunks"].add(chunk.id)
                    rec["kinds"].add(kind)
                for (ia, toks_a), (ib, toks_b) in zip(ents, ents[1:]):
                    gap = [t for j in range(ia + 1, ib) for t in runs[j][1]]
                    if not gap:
                        continue
                    label = " ".join(t.casefold() for t in gap)
                    src = canonicalize(" ".join(toks_a))
                    dst = canonicalize(" ".join(toks_b))
                    entities[src]["subject"] = True
                    rec = relations.setdefault(
                        (src, dst, label), {"chunks": set(), "kinds": set()})
                    rec["chunks"].add(chunk.id)
                    rec["kinds"].add(kind)
                    triple_sentences.append(
                        f"{entities[src]['display']} {label} {entities[dst]['display']}.")

        ent_specs = [
            EntitySpec(
                name=key,
                display_name=rec["display"],
                etype="person" if rec["subject"] else "unknown",
                kind=sorted(rec["kinds"])[0] if len(rec["kinds"]) == 1 else default_kind,
                source_chunks=frozenset(rec["chunks"]),
            )
            for key, rec in sorted(entities.items())
        ]
        rel_specs = [
            RelationSpec(
                name_tuple[0], name_tuple[1], name_tuple[2],
                kind=sorted(rec["kinds"])[0] if len(rec["kinds"]) == 1 else default_kind,
                source_chunks=frozenset(rec["chunks"]),
            )
            for name_tuple, rec in sorted(relations.items())
        ]
        description = " ".join(triple_sentences) if triple_sentences else \
            " ".join(c.content.strip() for c in chunks)
        result = ExtractionResult(description=description, entities=ent_specs,
                                  relations=rel_specs)
        _check_invariants(result, {c.id for c in chunks})
        return result


# -- remote backend ----------------------------------------------------------

class HttpLlmBackend:
    """Remote LLM extractor speaking the extraction document format."""

    name = "http"

    def __init__(self, endpoint: str, model_name: str, prompt_template: str,
                 timeout_ms: int = 30000, max_retries: int = 2,
                 backoff_s: float = 0.5, api_key: str | None = None):
        self.endpoint = endpoint
        self.model_name = model_name
        self.prompt_template = prompt_template
        self.timeout_ms = timeout_ms
        self.max_retries = max_retries
        self.backoff_s = backoff_s
        self.api_key = api_key

    def extract(self, chunks: list[Chunk],
                default_kind: MemoryKind = MemoryKind.EPISODIC) -> ExtractionResult:
        if not chunks:
            raise ValueError("extract requires a non-empty chunk list")
        body = {
            "model": self.model_name,
            "instruction": self.prompt_template,
            "chunks": [{"sequence": c.id.sequence, "digest": c.id.digest,
                        "content": c.content} for c in chunks],
        }
        headers = {}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_exc = None
        for attempt in range(self.max_retries + 1):
            try:
                resp = httpx.post(self.endpoint, json=body, headers=headers,
                                  timeout=self.timeout_ms / 1000.0)
                resp.raise_for_status()
                return validate_remote_output(resp.text, allowed={c.id for c in chunks},
                                              default_kind=default_kind)
            except (httpx.HTTPError, OSError) as exc:
                last_exc = exc
                if attempt < self.max_retries:
                    time.sleep(self.backoff_s)
        raise BackendUnavailable(f"extractor endpoint failed after retries: {last_exc}")


def validate_remote_output(raw: str, allowed: set[ChunkId] | None = None,
                           default_kind: MemoryKind = MemoryKind.EPISODIC) -> ExtractionResult:
    """Parse the extraction document format and enforce every invariant.

    Duplicate canonical entity names are merged with unioned source chunks;
    any other deviation is surfaced as ParseError / SchemaViolation.
    """
    try:
        doc = json.loads(raw)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(f"extraction document is not valid JSON: {exc}")
    if not isinstance(doc, dict) or not isinstance(doc.get("entities"), list) \
            or not isinstance(doc.get("relations"), list) \
            or not isinstance(doc.get("description"), str):
        raise SchemaViolation("document must have entities[], relations[], description")

    by_digest = {c.digest: c for c in (allowed or set())}

    def _chunk_ids(items) -> frozenset:
        ids = set()
        for item in items or []:
            if isinstance(item, dict):
                ids.add(ChunkId.from_dict(item))
            elif isinstance(item, str) and item in by_digest:
                ids.add(by_digest[item])
            else:
                raise SchemaViolation(f"unresolvable chunk reference {item!r}")
        return frozenset(ids)

    merged: dict[str, dict] = {}
    for ent in doc["entities"]:
        try:
            display = str(ent["name"])
            key = canonicalize(display)
            rec = merged.setdefault(key, {
                "display": display,
                "etype": str(ent.get("etype", "unknown")),
                "kind": MemoryKind(ent.get("kind", default_kind.value)),
                "chunks": set(),
            })
            rec["chunks"] |= _chunk_ids(ent.get("chunks"))
        except (KeyError, ValueError) as exc:
            raise SchemaViolation(f"bad entity object: {exc}")

    entities = [
        EntitySpec(name=key, display_name=rec["display"], etype=rec["etype"],
                   kind=rec["kind"], source_chunks=frozenset(rec["chunks"]))
        for key, rec in sorted(merged.items())
    ]
    relations = []
    for rel in doc["relations"]:
        try:
            relations.append(RelationSpec(
                src_name=canonicalize(str(rel["src"])),
                dst_name=canonicalize(str(rel["dst"])),
                label=str(rel["label"]),
                kind=MemoryKind(rel.get("kind", default_kind.value)),
                source_chunks=_chunk_ids(rel.get("chunks")),
            ))
        except (KeyError, ValueError) as exc:
            raise SchemaViolation(f"bad relation object: {exc}")

    result = ExtractionResult(description=doc["description"], entities=entities,
                              relations=relations)
    _check_invariants(result, allowed)
    return result


def extract(chunks: list[Chunk], backend,
            default_kind: MemoryKind = MemoryKind.EPISODIC) -> ExtractionResult:
    if not chunks:
        raise ValueError("extract requires a non-empty chunk list")
    return backend.extract(chunks, default_kind=default_kind)


def compress(chunks: list[Chunk], backend,
             budget: int = DEFAULT_COMPRESSION_BUDGET) -> str:
    """Salient description of the chunks, hard-capped at `budget` characters."""
    if not chunks:
        raise ValueError("compress requires a non-empty chunk list")
    description = backend.extract(chunks).description
    return description[:budget]
