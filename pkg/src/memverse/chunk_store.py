"""Append-only chunk store backed by a length-prefixed record log.

Layout of a store directory:
    MANIFEST    - text file, first line is the format version tag
    chunks.log  - sequence of records: u32le length | payload | u32le crc32

Payloads are canonical JSON (sorted keys, compact separators), one of:
    {"t": "put",  "chunk": {...}}
    {"t": "tomb", "sequence": n, "superseded": bool}

The in-memory index is rebuilt by replaying the log on open. A corrupt or
truncated tail is ignored, so every acknowledged write before a crash is
recovered and a half-written last record does not poison the store.
"""

from __future__ import annotations

import json
import struct
import threading
import zlib
from pathlib import Path
from typing import Callable, Optional

from .errors import (
    DuplicateTurn,
    EmptyContent,
    FormatVersionMismatch,
    NotFound,
    Tombstoned,
)
from .types import Chunk, ChunkId, MediaRef, MemoryKind, SystemClock, chunk_digest

FORMAT_VERSION = "memverse-chunklog/1"
_LEN = struct.Struct("<I")


def _encode_record(payload: dict) -> bytes:
    body = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _LEN.pack(len(body)) + body + _LEN.pack(zlib.crc32(body) & 0xFFFFFFFF)


class ChunkStore:
    """Durable, append-only store of immutable text chunks.

    Single-writer, multi-reader: mutating calls serialize on an internal
    lock; reads see committed state only.
    """

    def __init__(self, directory: str | Path, clock=None):
        self._dir = Path(directory)
        self._dir.mkdir(parents=True, exist_ok=True)
        self._clock = clock or SystemClock()
        self._lock = threading.RLock()
        self._chunks: dict[int, Chunk] = {}
        self._tombstones: dict[int, bool] = {}  # sequence -> superseded flag
        self._sessions: dict[str, dict[int, int]] = {}  # session -> turn -> sequence
        self._next_seq = 0

        manifest = self._dir / "MANIFEST"
        if manifest.exists():
            version = manifest.read_text(encoding="utf-8").splitlines()[0].strip()
            if version != FORMAT_VERSION:
                raise FormatVersionMismatch(f"store format {version!r}, expected {FORMAT_VERSION!r}")
        else:
            manifest.write_text(FORMAT_VERSION + "\n", encoding="utf-8")

        self._log_path = self._dir / "chunks.log"
        self._replay()
        self._log = open(self._log_path, "ab")

    # -- recovery ----------------------------------------------------------

    def _replay(self) -> None:
        if not self._log_path.exists():
            return
        data = self._log_path.read_bytes()
        pos = 0
        while pos + 4 <= len(data):
            (length,) = _LEN.unpack_from(data, pos)
            end = pos + 4 + length + 4
            if end > len(data):
                break  # truncated tail
            body = data[pos + 4 : pos + 4 + length]
            (crc,) = _LEN.unpack_from(data, pos + 4 + length)
            if crc != zlib.crc32(body) & 0xFFFFFFFF:
                break  # corrupt tail
            self._apply(json.loads(body.decode("utf-8")))
            pos = end

    def _apply(self, payload: dict) -> None:
        if payload["t"] == "put":
            chunk = Chunk.from_dict(payload["chunk"])
            self._chunks[chunk.id.sequence] = chunk
            self._sessions.setdefault(chunk.session_id, {})[chunk.turn_index] = chunk.id.sequence
            self._next_seq = max(self._next_seq, chunk.id.sequence + 1)
        elif payload["t"] == "tomb":
            self._tombstones[int(payload["sequence"])] = bool(payload.get("superseded"))

    def _append(self, payload: dict) -> None:
        self._log.write(_encode_record(payload))
        self._log.flush()

    # -- operations --------------------------------------------------------

    def put_chunk(self, content: str, session_id: str, turn_index: int,
                  media: Optional[list[MediaRef]] = None,
                  kind_hint: Optional[MemoryKind] = None,
                  supersedes: Optional[int] = None) -> ChunkId:
        media = list(media or [])
        if not content or not content.strip():
            raise EmptyContent("chunk content is empty after trimming")
        with self._lock:
            turns = self._sessions.setdefault(session_id, {})
            if turn_index in turns:
                raise DuplicateTurn(f"turn {turn_index} already present in session {session_id!r}")
            cid = ChunkId(self._next_seq, chunk_digest(content, session_id, media))
            chunk = Chunk(
                id=cid,
                content=content,
                session_id=session_id,
                turn_index=int(turn_index),
                created_at=self._clock.now_ms(),
                media=media,
                kind_hint=kind_hint,
                supersedes=supersedes,
            )
            self._append({"t": "put", "chunk": chunk.to_dict()})
            self._chunks[cid.sequence] = chunk
            turns[turn_index] = cid.sequence
            self._next_seq += 1
            return cid

    def get_chunk(self, chunk_id: ChunkId | int) -> Chunk:
        seq = chunk_id.sequence if isinstance(chunk_id, ChunkId) else int(chunk_id)
        chunk = self._chunks.get(seq)
        if chunk is None:
            raise NotFound(f"chunk {seq} was never stored")
        if isinstance(chunk_id, ChunkId) and chunk_id.digest != chunk.id.digest:
            raise NotFound(f"chunk {seq} digest mismatch")
        if seq in self._tombstones:
            raise Tombstoned(f"chunk {seq} is tombstoned")
        return chunk

    def exists_live(self, chunk_id: ChunkId | int) -> bool:
        seq = chunk_id.sequence if isinstance(chunk_id, ChunkId) else int(chunk_id)
        return seq in self._chunks and seq not in self._tombstones

    def tombstone(self, chunk_id: ChunkId | int,
                  ref_counter: Optional[Callable[[int], int]] = None,
                  superseded: bool = False) -> int:
        """Mark a chunk deleted; returns how many graph provenance entries
        referenced it (via the caller-supplied counter) so the caller can
        trigger provenance repair."""
        seq = chunk_id.sequence if isinstance(chunk_id, ChunkId) else int(chunk_id)
        with self._lock:
            if seq not in self._chunks or seq in self._tombstones:
                raise NotFound(f"chunk {seq} not present or already tombstoned")
            self._append({"t": "tomb", "sequence": seq, "superseded": superseded})
            self._tombstones[seq] = superseded
        return ref_counter(seq) if ref_counter else 0

    def list_session(self, session_id: str) -> list[Chunk]:
        turns = self._sessions.get(session_id, {})
        out = []
        for turn in sorted(turns):
            seq = turns[turn]
            if seq not in self._tombstones:
                out.append(self._chunks[seq])
        return out

    # -- introspection -----------------------------------------------------

    def live_sequences(self) -> list[int]:
        return sorted(s for s in self._chunks if s not in self._tombstones)

    def count_live(self) -> int:
        return len(self._chunks) - len(set(self._tombstones) & set(self._chunks))

    def is_superseded(self, seq: int) -> bool:
        return bool(self._tombstones.get(seq, False))

    def iter_live(self):
        for seq in self.live_sequences():
            yield self._chunks[seq]

    def close(self) -> None:
        with self._lock:
            if not self._log.closed:
                self._log.flush()
                self._log.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
