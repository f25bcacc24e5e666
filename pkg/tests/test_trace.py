import pytest

from app.core.errors import CorruptTraceError
from app.sim.trace import TraceRecorder, dumps_trace, loads_trace, read_trace, write_trace


def _recorded():
    rec = TraceRecorder()
    rec.record(0, "timer", 1, {"label": "boot"})
    rec.record(1500, "send", 1, {"env": 0, "dst": 2, "type": "x", "bytes": 40})
    rec.close(1500)
    return rec.events


def test_empty_text_is_an_empty_trace():
    assert loads_trace("") == []
    assert loads_trace("\n\n") == []


def test_missing_end_marker_is_truncation():
    text = dumps_trace(_recorded()[:-1])
    with pytest.raises(CorruptTraceError, match="truncado"):
        loads_trace(text)


def test_garbage_line_is_rejected():
    lines = dumps_trace(_recorded()).splitlines()
    lines[1] = '{"seq": 1, "kind": "teleport"}'
    with pytest.raises(CorruptTraceError, match="linha 2"):
        loads_trace("\n".join(lines))


def test_sequence_gap_is_rejected():
    events = _recorded()
    del events[1]
    with pytest.raises(CorruptTraceError):
        loads_trace(dumps_trace(events))


def test_file_round_trip(tmp_path):
    events = _recorded()
    path = write_trace(tmp_path / "a" / "trace.ndjson", events)
    assert read_trace(path) == events
    assert events[1].time_ms == 1.5


def test_missing_file(tmp_path):
    with pytest.raises(CorruptTraceError):
        read_trace(tmp_path / "nope.ndjson")
