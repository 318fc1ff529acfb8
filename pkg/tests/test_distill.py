import pytest

from memverse.distill import (
    SKIPPED,
    ExportManifest,
    TraceRecorder,
    format_prompt,
    read_training_file,
)
from memverse.errors import EmptyQuestion, NoTraces, ParseError


@pytest.fixture
def recorder(tmp_path, clock):
    r = TraceRecorder(tmp_path / "distill", clock=clock)
    yield r
    r.close()


def test_prompt_with_choices_golden():
    assert format_prompt("Which is a mammal?", ["cat", "rock"]) == \
        "Question: Which is a mammal? Choices: cat, rock"


def test_prompt_without_choices_omits_segment():
    assert format_prompt("When did we meet?", None) == "Question: When did we meet?"
    assert format_prompt("When did we meet?", []) == "Question: When did we meet?"


def test_prompt_three_choices_separator():
    assert format_prompt("q", ["a", "b", "c"]) == "Question: q Choices: a, b, c"


def test_prompt_empty_question():
    with pytest.raises(EmptyQuestion):
        format_prompt("", ["a"])
    with pytest.raises(EmptyQuestion):
        format_prompt("  ")


def test_record_and_get(recorder):
    tid = recorder.record_trace("q1", ["a"], "evidence text")
    assert tid != SKIPPED
    pair = recorder.get_trace(tid)
    assert pair.question == "q1" and pair.retrieved == "evidence text"


def test_empty_evidence_skipped(recorder):
    assert recorder.record_trace("q", None, "") == SKIPPED
    assert recorder.record_trace("q", None, "  ") == SKIPPED
    assert recorder.skip_count == 2
    assert recorder.pending_count() == 0


def test_distinct_trace_ids(recorder):
    a = recorder.record_trace("q1", None, "r1")
    b = recorder.record_trace("q2", None, "r2")
    assert a != b


def test_export_counts_and_manifest(recorder, tmp_path):
    for i in range(3):
        recorder.record_trace(f"q{i}", None, f"r{i}")
    out = tmp_path / "round1.jsonl"
    manifest = recorder.export_round(out)
    assert manifest.round == 1 and manifest.pair_count == 3
    lines = out.read_text().strip().splitlines()
    assert len(lines) == 3
    roundtrip = ExportManifest.from_text((tmp_path / "round1.jsonl.manifest").read_text())
    assert roundtrip == manifest


def test_export_excludes_prior_rounds(recorder, tmp_path):
    recorder.record_trace("q0", None, "r0")
    m1 = recorder.export_round(tmp_path / "r1.jsonl")
    recorder.record_trace("q1", None, "r1")
    recorder.record_trace("q2", None, "r2")
    m2 = recorder.export_round(tmp_path / "r2.jsonl")
    assert m2.round == m1.round + 1
    # set-difference oracle over trace ids
    ids1 = {r["trace_id"] for r in read_training_file(tmp_path / "r1.jsonl")}
    ids2 = {r["trace_id"] for r in read_training_file(tmp_path / "r2.jsonl")}
    assert len(ids2) == 2 and not (ids1 & ids2)


def test_export_no_traces(recorder, tmp_path):
    with pytest.raises(NoTraces):
        recorder.export_round(tmp_path / "empty.jsonl")


def test_round_trip_byte_identical(recorder, tmp_path):
    recorder.record_trace("What is Milo?", ["cat", "dog"], "Milo is a cat")
    out = tmp_path / "r.jsonl"
    recorder.export_round(out)
    records = read_training_file(out)
    assert records[0]["prompt"] == "Question: What is Milo? Choices: cat, dog"
    assert records[0]["target"] == "Milo is a cat"


def test_loader_parse_error_line_number(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"prompt":"p","target":"t","trace_id":"a","round":1}\n{"trunc')
    with pytest.raises(ParseError, match="line 2"):
        read_training_file(path)


def test_state_survives_reopen(tmp_path, clock):
    d = tmp_path / "distill"
    r = TraceRecorder(d, clock=clock)
    r.record_trace("q0", None, "r0")
    r.export_round(tmp_path / "r1.jsonl")
    r.record_trace("q1", None, "r1")
    r.close()
    reopened = TraceRecorder(d, clock=clock)
    assert reopened.current_round == 2
    assert reopened.pending_count() == 1
    m = reopened.export_round(tmp_path / "r2.jsonl")
    assert m.round == 2 and m.pair_count == 1
    reopened.close()
