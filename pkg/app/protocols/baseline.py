# app/protocols/baseline.py
"""
Fila eventualmente consistente, sem consenso: cada réplica responde pelo seu
estado local. Enqueues são difundidos na hora; remoções só na troca
periódica do conjunto completo (a cada sync_delay_ms; 0 = imediatamente).
"""
from typing import Dict, List

from app.protocols.base import Protocol, StepResult, register_protocol
from app.schemas.baseline import BaselineState, JobAnnounce, RemovalSync, baseline_message_adapter
from app.schemas.consensus import (
    Action, Broadcast, ClientRequestEvent, MessageEvent, Respond, Role, SetTimer, TimerEvent,
)
from app.services import queue_service

SYNC = "sync"


@register_protocol
class BaselineProtocol(Protocol):
    name = "baseline"
    durable_fields = ("known", "removed")
    message_types = (JobAnnounce, RemovalSync)
    message_adapter = baseline_message_adapter

    def init_state(self, node_id: int, n: int) -> BaselineState:
        return BaselineState(node_id=node_id, n=n, sync_delay_ms=self.params.sync_delay_ms)

    def boot(self, s: BaselineState, now_us: int) -> StepResult:
        if s.sync_delay_ms > 0:
            return s, [SetTimer(label=SYNC, delay_ms=s.sync_delay_ms)]
        return s, []

    def handle(self, s: BaselineState, ev) -> StepResult:
        if isinstance(ev, TimerEvent):
            if ev.label != SYNC:
                return s, []
            actions: List[Action] = [SetTimer(label=SYNC, delay_ms=s.sync_delay_ms)]
            if s.removed:
                actions.insert(0, Broadcast(payload=RemovalSync(removed=tuple(sorted(s.removed)))))
            return s, actions

        if isinstance(ev, MessageEvent):
            m = ev.payload
            if isinstance(m, JobAnnounce) and m.job.id not in s.known:
                return s.model_copy(update={"known": {**s.known, m.job.id: m.job}}), []
            if isinstance(m, RemovalSync):
                merged = s.removed | frozenset(m.removed)
                if merged != s.removed:
                    return s.model_copy(update={"removed": merged}), []
            return s, []

        assert isinstance(ev, ClientRequestEvent)
        cmd = ev.command
        ok = {"status": "ok", "op": cmd.op}
        if cmd.op == "enqueue":
            s = s.model_copy(update={"known": {**s.known, cmd.job.id: cmd.job}})
            return s, [
                Broadcast(payload=JobAnnounce(job=cmd.job)),
                Respond(client=ev.client, command_id=cmd.id, result={**ok, "job_id": cmd.job.id}),
            ]
        if cmd.op == "pop":
            s, job_id = queue_service.baseline_pop(s, ev.client)
            actions = [Respond(client=ev.client, command_id=cmd.id, result={**ok, "job_id": job_id})]
            if job_id is not None and s.sync_delay_ms == 0:
                actions.insert(0, Broadcast(payload=RemovalSync(removed=(job_id,))))
            return s, actions
        if cmd.op == "read":
            live = [j for j in s.known if j not in s.removed]
            result = {**ok, "head": queue_service.local_head(s), "length": len(live)}
            return s, [Respond(client=ev.client, command_id=cmd.id, result=result)]
        return s, [Respond(client=ev.client, command_id=cmd.id, result={**ok, "job_id": cmd.job_id})]

    def initial_target(self, client: int, n: int) -> int:
        return (client % n) + 1

    def role(self, s: BaselineState) -> Role:
        return Role.REPLICA

    def summary(self, s: BaselineState) -> Dict:
        return {"known": len(s.known), "removed": sorted(s.removed)}
