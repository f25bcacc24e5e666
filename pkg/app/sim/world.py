# app/sim/world.py
"""
Harness de eventos discretos: liga protocolo, rede, clientes e falhas num
único laço determinístico sobre o Scheduler. Tudo que acontece vira um
TraceEvent.
"""
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Deque, Dict, List, Optional, Tuple

from app.protocols.base import Protocol
from app.schemas.bench import WorkloadSpec
from app.schemas.common import NETWORK_NODE, ms_to_us, us_to_ms
from app.schemas.consensus import (
    Apply, Broadcast, CancelTimer, ClientRequestEvent, MessageEvent, Note, Persist,
    Respond, Send, SetTimer, TimerEvent,
)
from app.schemas.sim import LEADER_TARGET, CrashSpec, Envelope, FaultPlan, SimConfig, TraceEvent
from app.services.queue_service import ReplicaStateMachine
from app.sim import rng as streams
from app.sim.clients import ClientPool
from app.sim.engine import Scheduler
from app.sim.network import Network
from app.sim.trace import TraceRecorder

log = logging.getLogger(__name__)

BOOT_LABEL = "boot"


@dataclass
class Host:
    node: int
    state: Any = None
    alive: bool = True
    durable: Dict[str, Any] = field(default_factory=dict)
    timers: Dict[str, int] = field(default_factory=dict)  # label -> geração
    busy_until_us: int = 0
    backlog: Deque[Tuple[int, Tuple]] = field(default_factory=deque)
    drain_pending: bool = False
    # armazenamento da aplicação: sobrevive a crashes
    machine: ReplicaStateMachine = field(default_factory=ReplicaStateMachine)
    applied_upto: int = 0
    incarnation: int = 0


@dataclass
class WorldResult:
    events: List[TraceEvent]
    livelock: bool
    pending: int
    end_us: int
    first_crash_us: Optional[int] = None


class World:
    def __init__(self, protocol: Protocol, config: SimConfig, workload: WorkloadSpec, faults: Optional[FaultPlan] = None):
        self.protocol = protocol
        self.config = config
        self.workload = workload
        self.faults = faults or FaultPlan()
        self.n = config.node_count

        self.rngs = streams.RngStreams(config.seed)
        self.scheduler = Scheduler()
        self.network = Network(config, self.faults, self.rngs)
        self.trace = TraceRecorder()
        self.hosts: Dict[int, Host] = {i: Host(node=i) for i in range(1, self.n + 1)}
        self.clients = ClientPool(workload, self, self.rngs.stream(streams.WORKLOAD))

        self._timer_gen = 0
        self._stop_at: Optional[int] = None
        self.first_crash_us: Optional[int] = None

    @property
    def now_us(self) -> int:
        return self.scheduler.now_us

    # -----------------------------------------------------
    # execução
    # -----------------------------------------------------
    def run(self) -> WorldResult:
        self._boot()
        if self.clients.total == 0:
            log.info("carga vazia: encerrando após o boot")
            self.trace.close(self.now_us)
            return WorldResult(self.trace.events, False, 0, self.now_us)

        self._schedule_faults()
        self.clients.start()

        max_us = ms_to_us(self.config.max_virtual_time_ms)
        while self.scheduler:
            if self.scheduler.peek_time() > max_us:
                self.scheduler.now_us = max_us
                break
            if self._stop_at is not None and self.scheduler.peek_time() > self._stop_at:
                self.scheduler.now_us = self._stop_at
                break
            ev = self.scheduler.pop()
            self._dispatch(ev.kind, ev.data)

        pending = self.clients.outstanding
        livelock = not self.clients.finished()
        if livelock:
            log.warning("tempo virtual esgotado com %s operações pendentes", pending)

        for node, host in self.hosts.items():
            if host.alive:
                self.trace.record(self.now_us, "note", node, {"event": "final_log", **self.protocol.summary(host.state)})
        self.trace.close(self.now_us)
        return WorldResult(self.trace.events, livelock, pending, self.now_us, self.first_crash_us)

    def _boot(self) -> None:
        boot_detail = {
            "label": BOOT_LABEL,
            "protocol": self.protocol.name,
            "n": self.n,
            "params": self.protocol.params.model_dump(mode="json"),
            "clients": self.clients.max_clients,
            "closed_loop": self.workload.closed_loop,
        }
        for node in self.hosts:
            self.trace.record(0, "timer", node, boot_detail)
        if self.clients.total == 0:
            return
        for node, host in self.hosts.items():
            state = self.protocol.init_state(node, self.n)
            host.state, actions = self.protocol.start(state, self.now_us)
            self._perform(host, actions)

    def _schedule_faults(self) -> None:
        for crash in self.faults.crashes:
            self.scheduler.schedule(ms_to_us(crash.crash_at_ms), "crash", crash)
        for p in self.faults.partitions:
            self.scheduler.schedule(ms_to_us(p.start_ms), "partition", ("partition_start", p))
            self.scheduler.schedule(ms_to_us(p.end_ms), "partition", ("partition_end", p))

    def _dispatch(self, kind: str, data: Any) -> None:
        if kind == "deliver":
            self._on_deliver(data)
        elif kind == "timer":
            self._on_timer(*data)
        elif kind == "drain":
            self._drain(self.hosts[data])
        elif kind == "client_arrive":
            self._on_client_arrive(*data)
        elif kind == "client_response":
            self.clients.on_response(*data)
            self._check_finished()
        elif kind == "client_timeout":
            self.clients.on_timeout(*data)
        elif kind == "client_retry":
            self.clients.on_retry(*data)
        elif kind == "client_reset":
            self.clients.on_reset(*data)
        elif kind == "client_issue":
            self.clients.issue(data)
        elif kind == "script_op":
            self.clients.issue_scripted(data)
        elif kind == "ramp":
            self.clients.on_ramp(data)
        elif kind == "crash":
            self._crash(data)
        elif kind == "restart":
            self._restart(data)
        elif kind == "partition":
            event, p = data
            self.trace.record(self.now_us, "note", NETWORK_NODE, {"event": event, "side_a": p.side_a, "side_b": p.side_b})
        else:
            raise ValueError(f"evento desconhecido: {kind}")

    def _check_finished(self) -> None:
        if self._stop_at is None and self.clients.finished():
            self._stop_at = self.now_us + ms_to_us(self.config.settle_ms)

    # -----------------------------------------------------
    # chegada e processamento
    # -----------------------------------------------------
    def _on_deliver(self, env: Envelope) -> None:
        host = self.hosts[env.dst]
        reason = None
        if not host.alive:
            reason = "node_down"
        elif self.network.partitioned(env.src, env.dst, self.now_us):
            reason = "partition"
        if reason:
            self._trace_drop(NETWORK_NODE, env.id, env.src, env.dst, env.payload, reason)
            return
        self._arrive(host, ("deliver", env))

    def _on_timer(self, node: int, label: str, gen: int) -> None:
        host = self.hosts[node]
        if not host.alive or host.timers.get(label) != gen:
            return
        self._arrive(host, ("timer", label, gen))

    def _on_client_arrive(self, cmd_id: str, token: int) -> None:
        req = self.clients.current(cmd_id, token)
        if req is None:
            return
        host = self.hosts[req.target]
        if not host.alive:
            self.trace.record(self.now_us, "drop", NETWORK_NODE, {
                "client": req.client, "command_id": cmd_id, "dst": req.target, "reason": "node_down",
            })
            self.clients.refuse(req, req.target)
            return
        self._arrive(host, ("client", req.client, req.command, req.attempt, req.issued_us))

    def _arrive(self, host: Host, item: Tuple) -> None:
        now = self.now_us
        if host.busy_until_us > now or host.backlog:
            host.backlog.append((now, item))
            self._schedule_drain(host)
            return
        self._process(host, item, now)

    def _schedule_drain(self, host: Host) -> None:
        if not host.drain_pending:
            host.drain_pending = True
            self.scheduler.schedule(max(host.busy_until_us, self.now_us), "drain", host.node)

    def _drain(self, host: Host) -> None:
        host.drain_pending = False
        if not host.alive:
            return
        while host.backlog and host.busy_until_us <= self.now_us:
            arrived, item = host.backlog.popleft()
            self._process(host, item, arrived)
        if host.backlog:
            self._schedule_drain(host)

    def _cost_us(self, size_bytes: int) -> int:
        return self.config.processing_cost_us + (self.config.processing_cost_per_kb_us * size_bytes) // 1024

    def _process(self, host: Host, item: Tuple, arrived_us: int) -> None:
        now = self.now_us
        wait = now - arrived_us
        queued = self.protocol.backlog(host.state)
        kind = item[0]
        if kind == "deliver":
            env: Envelope = item[1]
            cost = self._cost_us(env.size_bytes)
            payload = env.payload
            self.trace.record(now, "deliver", host.node, {
                "env": env.id, "src": env.src, "type": _type_of(payload), "bytes": env.size_bytes,
                "dup": env.duplicate, "payload": _dump(payload), "cost_us": cost, "wait_us": wait, "queued": queued,
            })
            event = MessageEvent(src=env.src, payload=payload, now_us=now)
        elif kind == "timer":
            _, label, gen = item
            if host.timers.get(label) != gen:
                return
            del host.timers[label]
            cost = self._cost_us(0)
            self.trace.record(now, "timer", host.node, {"label": label, "cost_us": cost, "wait_us": wait, "queued": queued})
            event = TimerEvent(label=label, now_us=now)
        else:
            _, client, command, attempt, issued_us = item
            cost = self._cost_us(command.payload_bytes)
            self.trace.record(now, "client_req", host.node, {
                "client": client, "command": command.model_dump(mode="json"), "attempt": attempt,
                "issued_us": issued_us, "cost_us": cost, "wait_us": wait, "queued": queued,
            })
            event = ClientRequestEvent(client=client, command=command, now_us=now)

        host.busy_until_us = now + cost
        host.state, actions = self.protocol.step(host.state, event)
        self._perform(host, actions)

    # -----------------------------------------------------
    # efeitos
    # -----------------------------------------------------
    def _perform(self, host: Host, actions) -> None:
        for a in actions:
            if isinstance(a, Persist):
                host.durable.update(a.delta)
            elif isinstance(a, Send):
                self._send(host.node, a.dst, a.payload)
            elif isinstance(a, Broadcast):
                for dst in range(1, self.n + 1):
                    if dst != host.node:
                        self._send(host.node, dst, a.payload)
            elif isinstance(a, SetTimer):
                self._set_timer(host, a)
            elif isinstance(a, CancelTimer):
                host.timers.pop(a.label, None)
            elif isinstance(a, Apply):
                self._apply(host, a)
            elif isinstance(a, Respond):
                self._respond(host, a)
            elif isinstance(a, Note):
                self.trace.record(self.now_us, "note", host.node, {"event": a.event, **a.data})

    def _send(self, src: int, dst: int, payload) -> None:
        out = self.network.send(src, dst, payload, self.now_us)
        self.trace.record(self.now_us, "send", src, {
            "env": out.env_id, "dst": dst, "type": _type_of(payload), "bytes": out.size_bytes,
        })
        if out.drop_reason:
            self._trace_drop(src, out.env_id, src, dst, payload, out.drop_reason)
        for env in out.deliveries:
            self.scheduler.schedule(env.deliver_at_us, "deliver", env)

    def _trace_drop(self, node: int, env_id: int, src: int, dst: int, payload, reason: str) -> None:
        self.trace.record(self.now_us, "drop", node, {
            "env": env_id, "src": src, "dst": dst, "type": _type_of(payload), "reason": reason,
        })

    def _set_timer(self, host: Host, a: SetTimer) -> None:
        self._timer_gen += 1
        host.timers[a.label] = self._timer_gen
        delay_us = ms_to_us(a.delay_ms)
        if a.jitter_ms > 0:
            delay_us += ms_to_us(self.rngs.stream(streams.timeouts_label(host.node)).uniform(0, a.jitter_ms))
        self.scheduler.schedule_in(delay_us, "timer", (host.node, a.label, self._timer_gen))

    def _apply(self, host: Host, a: Apply) -> None:
        cmd = a.command
        # toda decisão do protocolo entra no trace, inclusive a repetida
        self.trace.record(self.now_us, "decide", host.node, {
            "index": a.index, "term": a.term, "value": cmd.id, "op": cmd.op, "incarnation": host.incarnation,
        })
        # reaplicação após restart: o armazenamento já tem esse prefixo
        if a.index <= host.applied_upto:
            return
        result, duplicate = host.machine.execute(cmd)
        host.applied_upto = a.index
        self.trace.record(self.now_us, "apply", host.node, {
            "index": a.index, "term": a.term, "value": cmd.id,
            "command": cmd.model_dump(mode="json"), "result": result, "duplicate": duplicate,
        })
        if result.get("ok") is False:
            self.trace.record(self.now_us, "note", host.node, {"event": "unknown_job", "job_id": cmd.job_id})

    def _respond(self, host: Host, a: Respond) -> None:
        status = a.result.get("status")
        if status == "committed":
            result = {**host.machine.results.get(a.command_id, {}), **a.result}
        elif status == "read":
            result = {**host.machine.read(), **a.result}
        else:
            result = dict(a.result)
        self.scheduler.schedule_in(
            self.network.sample_latency_us(), "client_response", (a.command_id, result, host.node),
        )

    # -----------------------------------------------------
    # falhas
    # -----------------------------------------------------
    def resolve_target(self, crash: CrashSpec) -> int:
        if crash.node != LEADER_TARGET:
            return crash.node
        leaders = [
            h for h in self.hosts.values()
            if h.alive and self.protocol.is_leader(h.state)
        ]
        if leaders:
            return max(leaders, key=lambda h: (_epoch_key(self.protocol.epoch(h.state)), -h.node)).node
        alive = [h.node for h in self.hosts.values() if h.alive]
        return alive[0] if alive else 1

    def _crash(self, crash: CrashSpec) -> None:
        node = self.resolve_target(crash)
        host = self.hosts[node]
        if not host.alive:
            # crash sobre nó já parado é ignorado, inclusive o restart associado
            log.debug("crash ignorado: nó %s já está parado", node)
            return
        if crash.restart_at_ms is not None:
            self.scheduler.schedule(max(ms_to_us(crash.restart_at_ms), self.now_us), "restart", node)
        if self.first_crash_us is None:
            self.first_crash_us = self.now_us
        log.info("crash do nó %s em %.1fms", node, us_to_ms(self.now_us))
        self.trace.record(self.now_us, "crash", node, {
            "target": crash.node, "queued": self.protocol.backlog(host.state),
        })
        host.alive = False
        host.state = None
        host.timers.clear()
        host.busy_until_us = self.now_us
        while host.backlog:
            _, item = host.backlog.popleft()
            if item[0] == "deliver":
                env = item[1]
                self._trace_drop(NETWORK_NODE, env.id, env.src, env.dst, env.payload, "crash")
            elif item[0] == "client":
                _, client, command, _, _ = item
                self.trace.record(self.now_us, "drop", NETWORK_NODE, {
                    "client": client, "command_id": command.id, "dst": node, "reason": "crash_backlog",
                })
        self.clients.on_node_down(node)

    def _restart(self, node: int) -> None:
        host = self.hosts[node]
        if host.alive:
            return
        log.info("restart do nó %s em %.1fms", node, us_to_ms(self.now_us))
        host.alive = True
        host.incarnation += 1
        host.busy_until_us = self.now_us
        self.trace.record(self.now_us, "restart", node, {"durable": sorted(host.durable), "queued": 0})
        state = self.protocol.restore(node, self.n, host.durable)
        host.state, actions = self.protocol.start(state, self.now_us)
        self._perform(host, actions)


def _type_of(payload) -> str:
    return getattr(payload, "type", type(payload).__name__)


def _dump(payload):
    dump = getattr(payload, "model_dump", None)
    return dump(mode="json") if callable(dump) else payload


def _epoch_key(epoch) -> Tuple:
    if isinstance(epoch, (tuple, list)):
        return tuple(epoch)
    return (epoch if epoch is not None else -1,)
