"""Supervision-pair pipeline: records retrieval traces, renders the training
prompt, and exports round-indexed (prompt, target) files for the parametric
trainer.

Training file: UTF-8 JSON lines, one flat object per line with keys
`prompt`, `target`, `trace_id`, `round`. The manifest is a sibling
`<name>.manifest` file of `key: value` lines.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass, field
from pathlib import Path

from .errors import EmptyQuestion, NoTraces, ParseError, StorageError
from .types import SystemClock

SKIPPED = "__skipped__"  # sentinel returned for empty-evidence traces


def format_prompt(question: str, choices: list[str] | None = None) -> str:
    """Render the training prompt: `Question: q Choices: c1, c2, ...`;
    the Choices segment is omitted entirely when there are none."""
    if not question or not question.strip():
        raise EmptyQuestion("question is empty")
    if not choices:
        return f"Question: {question}"
    return f"Question: {question} Choices: {', '.join(choices)}"


@dataclass
class SupervisionPair:
    question: str
    choices: list[str]
    retrieved: str
    round: int
    trace_id: str
    created_at: int


@dataclass
class ExportManifest:
    round: int
    pair_count: int
    file_digest: str
    source_graph_snapshot: str
    created_at: int
    domain_tag: str = ""

    def to_text(self) -> str:
        return (
            f"round: {self.round}\n"
            f"pair_count: {self.pair_count}\n"
            f"file_digest: {self.file_digest}\n"
            f"source_graph_snapshot: {self.source_graph_snapshot}\n"
            f"created_at: {self.created_at}\n"
            f"domain_tag: {self.domain_tag}\n"
        )

    @classmethod
    def from_text(cls, text: str) -> "ExportManifest":
        fields = {}
        for line in text.splitlines():
            if ":" in line:
                key, value = line.split(":", 1)
                fields[key.strip()] = value.strip()
        try:
            return cls(round=int(fields["round"]), pair_count=int(fields["pair_count"]),
                       file_digest=fields["file_digest"],
                       source_graph_snapshot=fields["source_graph_snapshot"],
                       created_at=int(fields["created_at"]),
                       domain_tag=fields.get("domain_tag", ""))
        except (KeyError, ValueError) as exc:
            raise ParseError(f"bad manifest: {exc}")


@dataclass
class _State:
    next_trace: int = 0
    exported_ids: set = field(default_factory=set)
    rounds_exported: int = 0
    skipped: int = 0


class TraceRecorder:
    """Persistent trace log with exactly-once round exports.

    State is rebuilt from `traces.jsonl` (append-only: `trace` and
    `exported` records) so a reopened recorder never re-exports a pair.
    """

    def __init__(self, directory: str | Path, clock=None):
        self._dir = Path(directory)
        self._dir.mkdir(parents=True, exist_ok=True)
        self._clock = clock or SystemClock()
        self._lock = threading.RLock()
        self._traces: dict[str, SupervisionPair] = {}
        self._state = _State()
        self._log_path = self._dir / "traces.jsonl"
        self._replay()
        self._log = open(self._log_path, "a", encoding="utf-8")

    def _replay(self) -> None:
        if not self._log_path.exists():
            return
        with open(self._log_path, encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                if rec["t"] == "trace":
                    pair = SupervisionPair(
                        question=rec["question"], choices=rec["choices"],
                        retrieved=rec["retrieved"], round=rec["round"],
                        trace_id=rec["trace_id"], created_at=rec["created_at"])
                    self._traces[pair.trace_id] = pair
                    num = int(pair.trace_id.lstrip("t"))
                    self._state.next_trace = max(self._state.next_trace, num + 1)
                elif rec["t"] == "exported":
                    self._state.exported_ids |= set(rec["trace_ids"])
                    self._state.rounds_exported = max(self._state.rounds_exported,
                                                      int(rec["round"]))

    def _append(self, rec: dict) -> None:
        self._log.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")
        self._log.flush()

    @property
    def current_round(self) -> int:
        """Round index the next export will carry (rounds start at 1)."""
        return self._state.rounds_exported + 1

    @property
    def skip_count(self) -> int:
        return self._state.skipped

    def pending_count(self) -> int:
        return len(self._traces) - len(self._state.exported_ids)

    def record_trace(self, query: str, choices: list[str] | None, retrieved: str) -> str:
        """Store a (q, R) trace; empty-evidence traces are skipped and counted."""
        if not query or not query.strip():
            raise EmptyQuestion("trace question is empty")
        with self._lock:
            if not retrieved or not retrieved.strip():
                self._state.skipped += 1
                return SKIPPED
            trace_id = f"t{self._state.next_trace:08d}"
            self._state.next_trace += 1
            pair = SupervisionPair(
                question=query, choices=list(choices or []), retrieved=retrieved,
                round=self.current_round, trace_id=trace_id,
                created_at=self._clock.now_ms())
            self._traces[trace_id] = pair
            self._append({"t": "trace", "trace_id": trace_id, "question": pair.question,
                          "choices": pair.choices, "retrieved": pair.retrieved,
                          "round": pair.round, "created_at": pair.created_at})
            return trace_id

    def get_trace(self, trace_id: str) -> SupervisionPair:
        return self._traces[trace_id]

    def export_round(self, path: str | Path, domain_tag: str = "",
                     source_graph_snapshot: str = "") -> ExportManifest:
        """Write every not-yet-exported trace as one training-file line."""
        with self._lock:
            pending = [self._traces[tid] for tid in sorted(self._traces)
                       if tid not in self._state.exported_ids]
            if not pending:
                raise NoTraces("no unexported traces in the current round")
            round_index = self.current_round
            lines = []
            for pair in pending:
                record = {
                    "prompt": format_prompt(pair.question, pair.choices),
                    "target": pair.retrieved,
                    "trace_id": pair.trace_id,
                    "round": round_index,
                }
                lines.append(json.dumps(record, sort_keys=True, separators=(",", ":")))
            body = ("\n".join(lines) + "\n").encode("utf-8")
            path = Path(path)
            try:
                path.parent.mkdir(parents=True, exist_ok=True)
                path.write_bytes(body)
            except OSError as exc:
                raise StorageError(f"cannot write export file: {exc}")
            manifest = ExportManifest(
                round=round_index,
                pair_count=len(pending),
                file_digest=hashlib.sha256(body).hexdigest(),
                source_graph_snapshot=source_graph_snapshot,
                created_at=self._clock.now_ms(),
                domain_tag=domain_tag,
            )
            manifest_path = path.with_name(path.name + ".manifest")
            manifest_path.write_text(manifest.to_text(), encoding="utf-8")
            self._append({"t": "exported", "round": round_index,
                          "trace_ids": [p.trace_id for p in pending]})
            self._state.exported_ids |= {p.trace_id for p in pending}
            self._state.rounds_exported = round_index
            return manifest

    def close(self) -> None:
        if not self._log.closed:
            self._log.flush()
            self._log.close()


def read_training_file(path: str | Path) -> list[dict]:
    """Parse an exported training file; the trainer's loader mirrors this."""
    records = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                rec = json.loads(line)
                records.append({"prompt": rec["prompt"], "target": rec["target"],
                                "trace_id": rec["trace_id"], "round": int(rec["round"])})
            except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
                raise ParseError(f"line {line_no}: {exc}")
    return records
