# app/sim/engine.py
import heapq
from typing import Any, List, NamedTuple

from app.core.errors import ScheduleError


class ScheduledEvent(NamedTuple):
    time_us: int
    seq: int
    kind: str
    data: Any


class Scheduler:
    """
    Relógio virtual + fila de prioridade.
    Empates em time_us são resolvidos pela ordem de inserção (seq), então a
    execução é uma ordem total e determinística.
    """

    def __init__(self) -> None:
        self.now_us: int = 0
        self._seq: int = 0
        self._heap: List[ScheduledEvent] = []

    def schedule(self, time_us: int, kind: str, data: Any = None) -> ScheduledEvent:
        if time_us < self.now_us:
            raise ScheduleError(f"evento '{kind}' agendado em {time_us}us < agora ({self.now_us}us)")
        ev = ScheduledEvent(int(time_us), self._seq, kind, data)
        self._seq += 1
        heapq.heappush(self._heap, ev)
        return ev

    def schedule_in(self, delay_us: int, kind: str, data: Any = None) -> ScheduledEvent:
        return self.schedule(self.now_us + max(0, int(delay_us)), kind, data)

    def pop(self) -> ScheduledEvent:
        ev = heapq.heappop(self._heap)
        self.now_us = ev.time_us
        return ev

    def peek_time(self) -> int:
        return self._heap[0].time_us

    def __len__(self) -> int:
        return len(self._heap)

    def __bool__(self) -> bool:
        return bool(self._heap)
