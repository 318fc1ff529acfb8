"""FastAPI service wrapping the orchestrator.

Every mutating request funnels into the orchestrator's serialized command
loop; errors are returned as a uniform {code, message} envelope.
"""

from __future__ import annotations

from contextlib import asynccontextmanager
from typing import Optional

from fastapi import FastAPI, Query, Request
from fastapi.responses import JSONResponse

from ..chunk_store import FORMAT_VERSION
from ..errors import (
    BackendUnavailable,
    BudgetInfeasible,
    CaptionerUnavailable,
    ConfigInvalid,
    DanglingChunk,
    DuplicateTurn,
    EmptyContent,
    EmptyQuery,
    EmptyQuestion,
    EndpointUnavailable,
    FormatVersionMismatch,
    MemverseError,
    ModalityMismatch,
    NoTraces,
    NotFound,
    SchemaViolation,
    StoreLocked,
    Tombstoned,
)
from ..orchestrator import Orchestrator
from ..retrieval import RetrievalParams
from ..types import MediaRef, MemoryKind, Modality
from .models import (
    AddMemoryRequest,
    AddMemoryResponse,
    ChunkIdModel,
    ConsolidateResponse,
    DeleteMemoryResponse,
    ExportRequest,
    ExportResponse,
    HealthResponse,
    MediaRefModel,
    PruneResponse,
    QueryResponse,
    ScoredChunkModel,
    StatsResponse,
    UpdateMemoryRequest,
    UpdateMemoryResponse,
)

_STATUS = {
    NotFound: 404,
    Tombstoned: 410,
    DuplicateTurn: 409,
    EmptyContent: 422,
    EmptyQuery: 422,
    EmptyQuestion: 422,
    ConfigInvalid: 422,
    ModalityMismatch: 422,
    SchemaViolation: 422,
    DanglingChunk: 409,
    BudgetInfeasible: 409,
    NoTraces: 409,
    FormatVersionMismatch: 500,
    CaptionerUnavailable: 503,
    BackendUnavailable: 503,
    EndpointUnavailable: 503,
    StoreLocked: 423,
}


def create_app(engine: Orchestrator) -> FastAPI:
    @asynccontextmanager
    async def _lifespan(_app: FastAPI):
        yield
        engine.close()

    app = FastAPI(title="memverse", version="0.1.0", lifespan=_lifespan)
    app.state.engine = engine

    @app.exception_handler(MemverseError)
    async def _memverse_error(request: Request, exc: MemverseError):
        status = _STATUS.get(type(exc), 500)
        return JSONResponse(status_code=status,
                            content={"code": exc.code, "message": exc.message})

    @app.post("/v1/memory", response_model=AddMemoryResponse)
    def add_memory(body: AddMemoryRequest):
        media = [MediaRef.make(m.uri, Modality(m.modality), m.byte_digest, m.meta)
                 for m in body.media]
        kind = MemoryKind(body.kind_hint) if body.kind_hint else None
        result = engine.add(body.content, body.session_id, body.turn_index,
                            media=media, kind_hint=kind)
        engine.tick()
        return AddMemoryResponse(
            chunk=ChunkIdModel(sequence=result.chunk_id.sequence,
                               digest=result.chunk_id.digest),
            pending=len(engine.pending))

    @app.patch("/v1/memory/{sequence}", response_model=UpdateMemoryResponse)
    def update_memory(sequence: int, body: UpdateMemoryRequest):
        result = engine.update(sequence, body.correction)
        return UpdateMemoryResponse(
            chunk=ChunkIdModel(sequence=result.chunk_id.sequence,
                               digest=result.chunk_id.digest),
            supersedes=sequence)

    @app.delete("/v1/memory/{sequence}", response_model=DeleteMemoryResponse)
    def delete_memory(sequence: int):
        result = engine.delete_chunk(sequence)
        return DeleteMemoryResponse(dangling_repaired=result.dangling_repaired,
                                    removed_entities=result.removed_entities,
                                    removed_relations=result.removed_relations)

    @app.get("/v1/query", response_model=QueryResponse)
    def query(q: str,
              hops: Optional[int] = Query(default=None, ge=1),
              budget: Optional[int] = Query(default=None, ge=0),
              top_m: Optional[int] = Query(default=None, ge=1),
              kinds: Optional[str] = None,
              path: Optional[str] = None,
              session: Optional[str] = None,
              choices: Optional[str] = None):
        params = RetrievalParams(
            top_m=top_m or engine.config.top_m,
            hop_limit=hops or engine.config.hops,
            context_budget=budget if budget is not None else engine.config.context_budget,
            kinds=frozenset(MemoryKind(k) for k in kinds.split(",")) if kinds
            else frozenset(MemoryKind),
            alpha=engine.config.alpha, beta=engine.config.beta)
        choice_list = [c for c in (choices.split(",") if choices else []) if c]
        result = engine.retrieve(q, params=params, path_hint=path,
                                 session_id=session, choices=choice_list or None)
        chunks, media = [], []
        context = result.answer
        if result.retrieval is not None:
            context = result.retrieval.context
            chunks = [
                ScoredChunkModel(sequence=sc.sequence, score=sc.score,
                                 content=engine.store.get_chunk(sc.sequence).content)
                for sc in result.retrieval.chunks
            ]
            media = [MediaRefModel(uri=m.uri, modality=m.modality.value,
                                   byte_digest=m.byte_digest, meta=m.meta_dict)
                     for m in result.retrieval.media]
        return QueryResponse(query=q, path=result.path.value, reason=result.reason,
                             answer=result.answer, context=context, chunks=chunks,
                             media=media, accesses=result.accesses,
                             staleness_rounds=result.staleness_rounds)

    @app.post("/v1/consolidate", response_model=ConsolidateResponse)
    def consolidate():
        action = engine.consolidate()
        return ConsolidateResponse(ok=action.ok, detail=action.detail,
                                   pending=len(engine.pending))

    @app.post("/v1/prune", response_model=PruneResponse)
    def prune():
        report = engine.prune()
        return PruneResponse(removed_entities=len(report.removed_entities),
                             removed_relations=len(report.removed_relations))

    @app.post("/v1/export", response_model=ExportResponse)
    def export(body: ExportRequest):
        manifest, path = engine.export_round(path=body.out, domain_tag=body.domain_tag)
        return ExportResponse(round=manifest.round, pair_count=manifest.pair_count,
                              file_digest=manifest.file_digest, path=str(path),
                              domain_tag=manifest.domain_tag)

    @app.get("/v1/stats", response_model=StatsResponse)
    def stats():
        graph_stats = engine.graph.stats()
        return StatsResponse(
            chunk_count=engine.store.count_live(),
            entity_count=graph_stats.entity_count,
            relation_count=graph_stats.relation_count,
            chunk_ref_count=graph_stats.chunk_ref_count,
            total_entities=graph_stats.total_entities,
            total_relations=graph_stats.total_relations,
            total_bytes_estimate=graph_stats.total_bytes_estimate,
            pending=len(engine.pending),
            stm_sessions=len(engine._windows),
            trace_skip_count=engine.recorder.skip_count,
            export_rounds=engine.recorder.current_round - 1)

    @app.get("/v1/healthz", response_model=HealthResponse)
    def healthz():
        return HealthResponse(status="ok", format_version=FORMAT_VERSION)

    return app
