"""Shared domain types: chunk identities, media references, memory kinds, clocks."""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional


class Modality(str, Enum):
    IMAGE = "image"
    AUDIO = "audio"
    VIDEO = "video"
    TEXT = "text"


class MemoryKind(str, Enum):
    CORE = "core"
    EPISODIC = "episodic"
    SEMANTIC = "semantic"


@dataclass(frozen=True)
class ChunkId:
    sequence: int
    digest: str

    def to_dict(self) -> dict:
        return {"sequence": self.sequence, "digest": self.digest}

    @classmethod
    def from_dict(cls, d: dict) -> "ChunkId":
        return cls(sequence=int(d["sequence"]), digest=str(d["digest"]))


@dataclass(frozen=True)
class MediaRef:
    uri: str
    modality: Modality
    byte_digest: Optional[str] = None
    meta: tuple = ()  # sorted (key, value) pairs; kept hashable

    @classmethod
    def make(cls, uri: str, modality: Modality, byte_digest: Optional[str] = None,
             meta: Optional[dict] = None) -> "MediaRef":
        if not uri:
            raise ValueError("MediaRef uri must be non-empty")
        items = tuple(sorted((str(k), str(v)) for k, v in (meta or {}).items()))
        return cls(uri=uri, modality=Modality(modality), byte_digest=byte_digest, meta=items)

    @property
    def meta_dict(self) -> dict:
        return dict(self.meta)

    def to_dict(self) -> dict:
        return {
            "uri": self.uri,
            "modality": self.modality.value,
            "byte_digest": self.byte_digest,
            "meta": self.meta_dict,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MediaRef":
        return cls.make(d["uri"], Modality(d["modality"]), d.get("byte_digest"),
                        d.get("meta") or {})


def chunk_digest(content: str, session_id: str, media: list) -> str:
    """Deterministic fingerprint of (content, session, sorted media uris)."""
    h = hashlib.sha256()
    h.update(content.encode("utf-8"))
    h.update(b"\x00")
    h.update(session_id.encode("utf-8"))
    for uri in sorted(m.uri for m in media):
        h.update(b"\x00")
        h.update(uri.encode("utf-8"))
    return h.hexdigest()


@dataclass
class Chunk:
    id: ChunkId
    content: str
    session_id: str
    turn_index: int
    created_at: int  # epoch milliseconds, UTC
    media: list = field(default_factory=list)
    kind_hint: Optional[MemoryKind] = None
    supersedes: Optional[int] = None  # sequence of the chunk this one replaces

    def to_dict(self) -> dict:
        return {
            "id": self.id.to_dict(),
            "content": self.content,
            "session_id": self.session_id,
            "turn_index": self.turn_index,
            "created_at": self.created_at,
            "media": [m.to_dict() for m in self.media],
            "kind_hint": self.kind_hint.value if self.kind_hint else None,
            "supersedes": self.supersedes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Chunk":
        return cls(
            id=ChunkId.from_dict(d["id"]),
            content=d["content"],
            session_id=d["session_id"],
            turn_index=int(d["turn_index"]),
            created_at=int(d["created_at"]),
            media=[MediaRef.from_dict(m) for m in d.get("media") or []],
            kind_hint=MemoryKind(d["kind_hint"]) if d.get("kind_hint") else None,
            supersedes=d.get("supersedes"),
        )


class SystemClock:
    def now_ms(self) -> int:
        return int(time.time() * 1000)


class ManualClock:
    """Injectable clock; operations never read the wall clock directly."""

    def __init__(self, start_ms: int = 0):
        self._now = int(start_ms)

    def now_ms(self) -> int:
        return self._now

    def advance(self, ms: int) -> None:
        self._now += int(ms)

    def set(self, ms: int) -> None:
        self._now = int(ms)
