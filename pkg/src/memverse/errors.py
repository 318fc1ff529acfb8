"""Exception hierarchy shared across the engine.

Every error carries a short machine-readable ``code`` used by the HTTP
error envelope and the CLI exit diagnostics.
"""

from __future__ import annotations


class MemverseError(Exception):
    code = "internal"

    def __init__(self, message: str = ""):
        super().__init__(message or self.__class__.__name__)
        self.message = message or self.__class__.__name__


# chunk store
class EmptyContent(MemverseError):
    code = "empty_content"


class DuplicateTurn(MemverseError):
    code = "duplicate_turn"


class NotFound(MemverseError):
    code = "not_found"


class Tombstoned(MemverseError):
    code = "tombstoned"


class FormatVersionMismatch(MemverseError):
    code = "format_version_mismatch"


class StorageError(MemverseError):
    code = "io_error"


# ingest
class ModalityMismatch(MemverseError):
    code = "modality_mismatch"


class CaptionerUnavailable(MemverseError):
    code = "captioner_unavailable"


class EmptyCaption(MemverseError):
    code = "empty_caption"


class ConfigInvalid(MemverseError):
    code = "config_invalid"


# stm
class InvalidCapacity(MemverseError):
    code = "invalid_capacity"


# extractor
class BackendUnavailable(MemverseError):
    code = "backend_unavailable"


class SchemaViolation(MemverseError):
    code = "schema_violation"


class ParseError(MemverseError):
    code = "parse_error"


# graph
class DanglingChunk(MemverseError):
    code = "dangling_chunk"


class BudgetInfeasible(MemverseError):
    code = "budget_infeasible"


# retrieval
class EmptyQuery(MemverseError):
    code = "empty_query"


# distill
class EmptyQuestion(MemverseError):
    code = "empty_question"


class NoTraces(MemverseError):
    code = "no_traces"


# service
class EndpointUnavailable(MemverseError):
    code = "endpoint_unavailable"


class StoreLocked(MemverseError):
    code = "store_locked"
