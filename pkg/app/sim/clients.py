# app/sim/clients.py
"""
Clientes simulados: malha fechada (cada cliente com no máximo uma operação
pendente, rampa de concorrência, think time) ou roteiro aberto (ScriptedOp).
Pedidos e respostas atravessam o enlace cliente-nó com latência sorteada.
"""
import logging
import random
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Dict, Optional, Set

from app.core.config import settings
from app.schemas.bench import WorkloadSpec
from app.schemas.common import NETWORK_NODE, ms_to_us, us_to_ms
from app.schemas.queue import Job, QueueCommand
from app.utils.ids import command_id

if TYPE_CHECKING:
    from app.sim.world import World

log = logging.getLogger(__name__)


@dataclass
class Request:
    command: QueueCommand
    client: int
    issued_us: int
    target: int
    pinned: bool = False
    attempt: int = 0
    token: int = 0
    refused: Set[int] = field(default_factory=set)  # nós que derrubaram a conexão


@dataclass
class ClientSlot:
    client: int
    seq: int = 0
    target: int = 1
    active: Optional[str] = None  # command id em voo
    idle: bool = True
    completed: int = 0


@dataclass
class ClientPool:
    spec: WorkloadSpec
    world: "World"
    rng: random.Random
    timeout_us: int = field(default_factory=lambda: ms_to_us(settings.CLIENT_TIMEOUT_MS))
    backoff_us: int = field(default_factory=lambda: ms_to_us(settings.REDIRECT_BACKOFF_MS))

    def __post_init__(self) -> None:
        n = self.world.n
        proto = self.world.protocol
        self.slots: Dict[int, ClientSlot] = {
            c: ClientSlot(client=c, target=proto.initial_target(c, n))
            for c in range(self.spec.client_concurrency)
        }
        self.requests: Dict[str, Request] = {}
        self.issued = 0
        self.completed = 0
        self.next_job_id = 0

    # -----------------------------------------------------
    # consultas
    # -----------------------------------------------------
    @property
    def total(self) -> int:
        return self.spec.total_ops

    @property
    def outstanding(self) -> int:
        return len(self.requests)

    def finished(self) -> bool:
        return self.completed >= self.total and not self.requests

    @property
    def max_clients(self) -> int:
        return self.spec.client_concurrency

    # -----------------------------------------------------
    # início
    # -----------------------------------------------------
    def start(self) -> None:
        sched = self.world.scheduler
        if not self.spec.closed_loop:
            for idx, op in enumerate(self.spec.script):
                sched.schedule(ms_to_us(op.at_ms), "script_op", idx)
            return
        for step in self.spec.ramp:
            sched.schedule(ms_to_us(step.at_ms), "ramp", step.concurrency)
        self._wake_idle()

    def on_ramp(self, concurrency: int) -> None:
        log.debug("rampa: %s clientes em %.1fms", concurrency, us_to_ms(self.world.now_us))
        self._wake_idle()

    def _wake_idle(self) -> None:
        for slot in self.slots.values():
            if slot.idle:
                self.issue(slot.client)

    # -----------------------------------------------------
    # emissão
    # -----------------------------------------------------
    def issue(self, client: int) -> None:
        slot = self.slots[client]
        slot.idle = True
        if slot.active is not None or self.issued >= self.total:
            return
        limit = self.spec.concurrency_at(us_to_ms(self.world.now_us))
        if client >= limit:
            return
        slot.idle = False
        slot.seq += 1
        cmd = self._generate(client, slot.seq)
        slot.active = cmd.id
        self.issued += 1
        self._submit(Request(command=cmd, client=client, issued_us=self.world.now_us, target=slot.target))

    def issue_scripted(self, idx: int) -> None:
        op = self.spec.script[idx]
        slot = self.slots.setdefault(op.client, ClientSlot(client=op.client, target=op.node, idle=False))
        slot.seq += 1
        job = None
        if op.op == "enqueue":
            job = self._new_job(op.payload_bytes)
        cmd = QueueCommand(id=command_id(op.client, slot.seq), client=op.client, seq=slot.seq, op=op.op, job=job)
        self.issued += 1
        self._submit(Request(command=cmd, client=op.client, issued_us=self.world.now_us, target=op.node, pinned=True))

    def _generate(self, client: int, seq: int) -> QueueCommand:
        # duas amostras por operação, sempre, para manter o fluxo estável
        write_draw = self.rng.random()
        kind_draw = self.rng.random()
        cid = command_id(client, seq)
        if write_draw >= self.spec.mix:
            return QueueCommand(id=cid, client=client, seq=seq, op="read")
        if kind_draw < self.spec.pop_fraction:
            return QueueCommand(id=cid, client=client, seq=seq, op="pop")
        return QueueCommand(
            id=cid, client=client, seq=seq, op="enqueue", job=self._new_job(self.spec.payload_bytes),
        )

    def _new_job(self, payload_bytes: int) -> Job:
        job = Job(id=self.next_job_id, payload_bytes=payload_bytes, enqueued_at_ms=us_to_ms(self.world.now_us))
        self.next_job_id += 1
        return job

    def _submit(self, req: Request) -> None:
        self.requests[req.command.id] = req
        self._send_attempt(req)

    def _send_attempt(self, req: Request) -> None:
        req.attempt += 1
        req.token += 1
        sched = self.world.scheduler
        sched.schedule_in(self.world.network.sample_latency_us(), "client_arrive", (req.command.id, req.token))
        sched.schedule_in(self.timeout_us, "client_timeout", (req.command.id, req.token))

    # -----------------------------------------------------
    # eventos
    # -----------------------------------------------------
    def current(self, cmd_id: str, token: int) -> Optional[Request]:
        req = self.requests.get(cmd_id)
        if req is None or req.token != token:
            return None
        return req

    def on_timeout(self, cmd_id: str, token: int) -> None:
        req = self.current(cmd_id, token)
        if req is None:
            return
        req.target = self.world.protocol.next_target(req.target, self.world.n)
        self._send_attempt(req)

    def on_retry(self, cmd_id: str, token: int) -> None:
        req = self.current(cmd_id, token)
        if req is not None:
            self._send_attempt(req)

    def on_node_down(self, node: int) -> None:
        """Crash do nó: toda conexão aberta com ele recebe reset pelo enlace."""
        for req in self.requests.values():
            if req.target == node:
                self.refuse(req, node)

    def refuse(self, req: Request, node: int) -> None:
        self.world.scheduler.schedule_in(
            self.world.network.sample_latency_us(), "client_reset", (req.command.id, req.token, node),
        )

    def on_reset(self, cmd_id: str, token: int, node: int) -> None:
        req = self.current(cmd_id, token)
        if req is None or req.target != node:
            return
        req.refused.add(node)
        req.token += 1
        req.target = self.world.protocol.next_target(node, self.world.n)
        self.world.scheduler.schedule_in(self.backoff_us, "client_retry", (cmd_id, req.token))

    def on_response(self, cmd_id: str, result: Dict[str, Any], node: int) -> None:
        req = self.requests.get(cmd_id)
        if req is None:
            return  # resposta atrasada de uma tentativa já concluída

        if result.get("status") == "redirect":
            if req.target != node:
                return  # já foi para outro nó
            hint = result.get("leader")
            req.token += 1
            if hint and hint != node and hint not in req.refused:
                req.target = hint
                self._send_attempt(req)
            else:
                req.target = self.world.protocol.next_target(node, self.world.n)
                self.world.scheduler.schedule_in(self.backoff_us, "client_retry", (cmd_id, req.token))
            return

        now = self.world.now_us
        del self.requests[cmd_id]
        self.completed += 1
        self.world.trace.record(now, "client_resp", NETWORK_NODE, {
            "client": req.client,
            "command_id": cmd_id,
            "op": req.command.op,
            "status": result.get("status"),
            "result": result,
            "latency_us": now - req.issued_us,
            "issued_us": req.issued_us,
            "served_by": node,
            "attempts": req.attempt,
        })

        slot = self.slots.get(req.client)
        if slot is not None and slot.active == cmd_id:
            slot.active = None
            slot.completed += 1
            if not req.pinned:
                slot.target = node
            if self.spec.think_time_ms > 0:
                slot.idle = False
                self.world.scheduler.schedule_in(ms_to_us(self.spec.think_time_ms), "client_issue", req.client)
            else:
                self.issue(req.client)
