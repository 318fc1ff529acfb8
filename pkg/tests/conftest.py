import pytest

from memverse.chunk_store import ChunkStore
from memverse.types import ManualClock


@pytest.fixture
def clock():
    return ManualClock(1_700_000_000_000)


@pytest.fixture
def store(tmp_path, clock):
    s = ChunkStore(tmp_path / "store", clock=clock)
    yield s
    s.close()
