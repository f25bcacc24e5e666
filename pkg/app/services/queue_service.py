# app/services/queue_service.py
"""
Fila de jobs replicada: máquina de estados aplicada na ordem do log (modo com
consenso) e o pop local da baseline sem consenso, mais a auditoria de
colisões sobre o trace.
"""
import logging
from collections import defaultdict
from typing import Any, Dict, Iterable, List, Optional, Set, Tuple

from app.schemas.baseline import BaselineState
from app.schemas.bench import ScriptedOp, WorkloadSpec
from app.schemas.queue import CollisionReport, QueueCommand, QueueState
from app.schemas.sim import TraceEvent

log = logging.getLogger(__name__)

Result = Dict[str, Any]


# ---------------------------------------------------------
# Máquina de estados
# ---------------------------------------------------------
def apply(state: QueueState, cmd: QueueCommand) -> Tuple[QueueState, Result]:
    """Determinística dada a ordem dos comandos."""
    if cmd.op == "enqueue":
        job = cmd.job
        return (
            state.model_copy(update={"pending": state.pending + (job,), "enqueued": state.enqueued + 1}),
            {"op": "enqueue", "job_id": job.id},
        )
    if cmd.op == "pop":
        if not state.pending:
            return state, {"op": "pop", "job_id": None}
        head, rest = state.pending[0], state.pending[1:]
        return (
            state.model_copy(update={
                "pending": rest,
                "in_progress": {**state.in_progress, head.id: cmd.client},
                "popped": state.popped + 1,
            }),
            {"op": "pop", "job_id": head.id},
        )
    if cmd.op == "complete":
        if cmd.job_id not in state.in_progress:
            return state, {"op": "complete", "job_id": cmd.job_id, "ok": False}
        in_progress = dict(state.in_progress)
        in_progress.pop(cmd.job_id)
        return (
            state.model_copy(update={"in_progress": in_progress, "done": state.done + (cmd.job_id,)}),
            {"op": "complete", "job_id": cmd.job_id, "ok": True},
        )
    if cmd.op == "read":
        return state, read(state)
    return state, {"op": "noop"}


def read(state: QueueState) -> Result:
    head = state.pending[0].id if state.pending else None
    return {"op": "read", "head": head, "length": len(state.pending)}


class ReplicaStateMachine:
    """
    Estado da fila de uma réplica + tabela de sessões.
    Um comando decidido duas vezes (retry do cliente) só tem efeito uma vez.
    """

    def __init__(self) -> None:
        self.state = QueueState()
        self.sessions: Dict[Tuple[int, int], Result] = {}
        self.results: Dict[str, Result] = {}

    def execute(self, cmd: QueueCommand) -> Tuple[Result, bool]:
        if cmd.op == "noop":
            return {"op": "noop"}, False
        key = (cmd.client, cmd.seq)
        cached = self.sessions.get(key)
        if cached is not None:
            return cached, True
        self.state, result = apply(self.state, cmd)
        self.sessions[key] = result
        self.results[cmd.id] = result
        return result, False

    def read(self) -> Result:
        return read(self.state)


# ---------------------------------------------------------
# Baseline sem consenso
# ---------------------------------------------------------
def local_head(state: BaselineState) -> Optional[int]:
    live = [job for job_id, job in state.known.items() if job_id not in state.removed]
    if not live:
        return None
    return min(live, key=lambda j: (j.enqueued_at_ms, j.id)).id


def baseline_pop(state: BaselineState, worker: int) -> Tuple[BaselineState, Optional[int]]:
    """Retira a cabeça da cópia local; outras réplicas só saberão na próxima sincronização."""
    head = local_head(state)
    if head is None:
        return state, None
    log.debug("réplica %s entrega job %s ao worker %s", state.node_id, head, worker)
    return state.model_copy(update={"removed": state.removed | {head}}), head


# ---------------------------------------------------------
# Auditoria
# ---------------------------------------------------------
def audit(trace: Iterable[TraceEvent]) -> CollisionReport:
    enqueued: Set[int] = set()
    handed_out: Dict[int, Set[str]] = defaultdict(set)

    for ev in trace:
        d = ev.detail
        if ev.kind == "client_req":
            cmd = d.get("command") or {}
            if cmd.get("op") == "enqueue" and cmd.get("job"):
                enqueued.add(cmd["job"]["id"])
        elif ev.kind == "apply":
            result = d.get("result") or {}
            if result.get("op") == "enqueue":
                enqueued.add(result["job_id"])
        elif ev.kind == "client_resp":
            result = d.get("result") or {}
            if d.get("op") == "pop" and result.get("job_id") is not None:
                handed_out[result["job_id"]].add(d.get("command_id"))

    duplicates = sorted(j for j, cmds in handed_out.items() if len(cmds) >= 2)
    ghosts = sorted(j for j in handed_out if j not in enqueued)
    return CollisionReport(
        duplicate_pops=len(duplicates),
        ghost_jobs=len(ghosts),
        duplicate_job_ids=duplicates,
        ghost_job_ids=ghosts,
    )


# ---------------------------------------------------------
# Cenário roteirizado de colisão
# ---------------------------------------------------------
PRODUCER = 0


def collision_scenario(
    jobs: int = 20,
    period_ms: float = 50.0,
    start_ms: float = 200.0,
    enqueue_gap_ms: float = 5.0,
    payload_bytes: int = 100,
    worker_nodes: Tuple[int, int] = (1, 2),
) -> WorkloadSpec:
    """
    Um produtor enfileira `jobs` jobs no nó 1; dois workers presos a réplicas
    diferentes fazem pop a cada `period_ms`, o segundo defasado meio período.
    """
    script: List[ScriptedOp] = [
        ScriptedOp(at_ms=i * enqueue_gap_ms, client=PRODUCER, node=1, op="enqueue", payload_bytes=payload_bytes)
        for i in range(jobs)
    ]
    pops = jobs // 2
    for w, node in enumerate(worker_nodes, start=1):
        offset = (w - 1) * period_ms / 2
        script += [
            ScriptedOp(at_ms=start_ms + offset + k * period_ms, client=w, node=node, op="pop")
            for k in range(pops)
        ]
    script.sort(key=lambda op: (op.at_ms, op.client))
    return WorkloadSpec(op_count=len(script), client_concurrency=len(worker_nodes) + 1, script=script)
