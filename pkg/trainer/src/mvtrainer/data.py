"""Readers for the memory engine's export artifacts.

The training file is JSONL with {prompt, target, trace_id, round}; the
manifest is a sibling `<name>.manifest` of `key: value` lines. These formats
are the only coupling between the trainer and the memory engine.
"""

from __future__ import annotations

import json
from pathlib import Path

from .errors import ParseError


def load_pairs(path: str | Path) -> list[dict]:
    """Parse a training file into records; malformed lines report their
    1-based line number."""
    records = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                rec = json.loads(line)
                records.append({"prompt": str(rec["prompt"]),
                                "target": str(rec["target"]),
                                "trace_id": str(rec["trace_id"]),
                                "round": int(rec["round"])})
            except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
                raise ParseError(f"line {line_no}: {exc}")
    return records


def read_manifest(path: str | Path) -> dict[str, str]:
    values: dict[str, str] = {}
    text = Path(path).read_text(encoding="utf-8")
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if ": " not in line:
            raise ParseError(f"line {line_no}: expected 'key: value'")
        key, value = line.split(": ", 1)
        values[key] = value
    return values


def manifest_for(training_path: str | Path) -> Path:
    training_path = Path(training_path)
    return training_path.with_name(training_path.name + ".manifest")
