"""memverse: a provenance-linked hierarchical knowledge-graph memory engine
for agents, with retrieval serving and distillation export."""

from .chunk_store import ChunkStore
from .config import EngineConfig, load_config, parse_config
from .ltm_graph import LtmGraph, PruneBudget
from .orchestrator import Orchestrator
from .retrieval import RetrievalParams, Retriever
from .types import Chunk, ChunkId, ManualClock, MediaRef, MemoryKind, Modality

__version__ = "0.1.0"

__all__ = [
    "Chunk",
    "ChunkId",
    "ChunkStore",
    "EngineConfig",
    "LtmGraph",
    "ManualClock",
    "MediaRef",
    "MemoryKind",
    "Modality",
    "Orchestrator",
    "PruneBudget",
    "RetrievalParams",
    "Retriever",
    "load_config",
    "parse_config",
    "__version__",
]
