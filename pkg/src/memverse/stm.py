"""Short-term memory: a fixed-capacity sliding window over recent query turns."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Optional

from .errors import InvalidCapacity
from .types import ChunkId

DEFAULT_CAPACITY = 10


@dataclass(frozen=True)
class Turn:
    chunk_id: ChunkId
    query_text: str
    timestamp: int


class StmWindow:
    def __init__(self, capacity: int = DEFAULT_CAPACITY):
        if capacity < 1:
            raise InvalidCapacity(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._turns: deque[Turn] = deque()

    @property
    def turns(self) -> list[Turn]:
        return list(self._turns)

    def __len__(self) -> int:
        return len(self._turns)

    def push(self, turn: Turn) -> Optional[Turn]:
        """Append the newest turn; returns the evicted oldest turn, if any."""
        evicted = None
        if len(self._turns) >= self.capacity:
            evicted = self._turns.popleft()
        self._turns.append(turn)
        return evicted

    def window_text(self) -> str:
        return "\n".join(t.query_text for t in self._turns)

    def replace(self, old_sequence: int, new_turn: Turn) -> bool:
        """Swap a windowed turn in place (supersession); order preserved."""
        for i, t in enumerate(self._turns):
            if t.chunk_id.sequence == old_sequence:
                self._turns[i] = new_turn
                return True
        return False

    def resize(self, new_capacity: int) -> list[Turn]:
        """Shrink or grow the window; evicted turns are returned oldest-first."""
        if new_capacity < 1:
            raise InvalidCapacity(f"capacity must be >= 1, got {new_capacity}")
        evicted = []
        while len(self._turns) > new_capacity:
            evicted.append(self._turns.popleft())
        self.capacity = new_capacity
        return evicted
