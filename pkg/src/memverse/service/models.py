"""Pydantic request/response models for the HTTP API."""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field


class MediaRefModel(BaseModel):
    uri: str
    modality: str
    byte_digest: Optional[str] = None
    meta: dict[str, str] = Field(default_factory=dict)


class AddMemoryRequest(BaseModel):
    content: str = ""
    session_id: str = "default"
    turn_index: int
    media: list[MediaRefModel] = Field(default_factory=list)
    kind_hint: Optional[str] = None


class ChunkIdModel(BaseModel):
    sequence: int
    digest: str


class AddMemoryResponse(BaseModel):
    chunk: ChunkIdModel
    pending: int


class UpdateMemoryRequest(BaseModel):
    correction: str


class UpdateMemoryResponse(BaseModel):
    chunk: ChunkIdModel
    supersedes: int


class DeleteMemoryResponse(BaseModel):
    dangling_repaired: int
    removed_entities: int
    removed_relations: int


class ScoredChunkModel(BaseModel):
    sequence: int
    score: float
    content: str


class QueryResponse(BaseModel):
    query: str
    path: str
    reason: str
    answer: str
    context: str
    chunks: list[ScoredChunkModel] = Field(default_factory=list)
    media: list[MediaRefModel] = Field(default_factory=list)
    accesses: int = 0
    staleness_rounds: Optional[int] = None


class ConsolidateResponse(BaseModel):
    ok: bool
    detail: str
    pending: int


class PruneResponse(BaseModel):
    removed_entities: int
    removed_relations: int


class ExportRequest(BaseModel):
    out: Optional[str] = None
    domain_tag: Optional[str] = None


class ExportResponse(BaseModel):
    round: int
    pair_count: int
    file_digest: str
    path: str
    domain_tag: str


class StatsResponse(BaseModel):
    chunk_count: int
    entity_count: dict[str, int]
    relation_count: dict[str, int]
    chunk_ref_count: dict[str, int]
    total_entities: int
    total_relations: int
    total_bytes_estimate: int
    pending: int
    stm_sessions: int
    trace_skip_count: int
    export_rounds: int


class HealthResponse(BaseModel):
    status: str
    format_version: str


class ErrorEnvelope(BaseModel):
    code: str
    message: str
