# app/sim/trace.py
"""
Trace de auditoria: um TraceEvent por linha (NDJSON), ordem de campos estável.
Um arquivo não vazio termina sempre com a nota `end`; sem ela o trace é
considerado truncado.
"""
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Union

from pydantic import ValidationError

from app.core.errors import CorruptTraceError
from app.schemas.sim import TraceEvent, TraceKind

END_NOTE = "end"


class TraceRecorder:
    def __init__(self) -> None:
        self.events: List[TraceEvent] = []

    def record(self, time_us: int, kind: TraceKind, node: int, detail: Optional[Dict[str, Any]] = None) -> TraceEvent:
        ev = TraceEvent(seq=len(self.events), time_us=time_us, kind=kind, node=node, detail=detail or {})
        self.events.append(ev)
        return ev

    def close(self, time_us: int) -> None:
        self.record(time_us, "note", 0, {"event": END_NOTE})


def is_end_marker(ev: TraceEvent) -> bool:
    return ev.kind == "note" and ev.detail.get("event") == END_NOTE


def dumps_trace(events: Iterable[TraceEvent]) -> str:
    return "".join(ev.model_dump_json() + "\n" for ev in events)


def loads_trace(text: str) -> List[TraceEvent]:
    if not text.strip():
        return []
    events: List[TraceEvent] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            events.append(TraceEvent.model_validate_json(line))
        except ValidationError as e:
            raise CorruptTraceError(f"linha {lineno} inválida: {e.errors()[0].get('msg', e)}") from e
    if not events or not is_end_marker(events[-1]):
        raise CorruptTraceError("trace truncado: falta o marcador de fim")
    for expected, ev in enumerate(events):
        if ev.seq != expected:
            raise CorruptTraceError(f"seq fora de ordem na posição {expected}: {ev.seq}")
    return events


def write_trace(path: Union[str, Path], events: Iterable[TraceEvent]) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(dumps_trace(events), encoding="utf-8")
    return p


def read_trace(path: Union[str, Path]) -> List[TraceEvent]:
    p = Path(path)
    if not p.exists():
        raise CorruptTraceError(f"arquivo de trace não encontrado: {p}")
    return loads_trace(p.read_text(encoding="utf-8"))
