# app/schemas/bench.py
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

from app.schemas.queue import CollisionReport, QueueOp


class RampStep(BaseModel):
    at_ms: float = Field(..., ge=0)
    concurrency: int = Field(..., ge=0)


def parse_ramp(text: str) -> List[RampStep]:
    """
    Converte a forma de flag "0:1,2000:3,4000:5" em degraus (at_ms, concorrência).
    """
    steps: List[RampStep] = []
    for chunk in str(text).split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        at, _, conc = chunk.partition(":")
        if not conc:
            raise ValueError(f"degrau de rampa inválido '{chunk}' (esperado at_ms:clientes)")
        steps.append(RampStep(at_ms=float(at), concurrency=int(conc)))
    return sorted(steps, key=lambda s: s.at_ms)


class ScriptedOp(BaseModel):
    """Operação de carga aberta: emitida em `at_ms` por `client` contra o nó `node`."""
    at_ms: float = Field(..., ge=0)
    client: int = Field(..., ge=0)
    node: int = Field(..., ge=1)
    op: QueueOp
    payload_bytes: int = Field(0, ge=0)


class WorkloadSpec(BaseModel):
    """
    Carga em malha fechada espelhando o stress tool:
    -n -> op_count, -t -> client_concurrency, -b/-c -> payload_bytes, -o insert -> mix=1.0
    """
    op_count: int = Field(0, ge=0)
    client_concurrency: int = Field(1, ge=1)
    payload_bytes: int = Field(1000, ge=0)
    mix: float = Field(1.0, ge=0, le=1, description="Fração de escritas")
    pop_fraction: float = Field(0.0, ge=0, le=1, description="Fração das escritas que são pop")
    think_time_ms: float = Field(0.0, ge=0)
    ramp: List[RampStep] = Field(default_factory=list)
    script: List[ScriptedOp] = Field(default_factory=list)

    @field_validator("ramp", mode="before")
    @classmethod
    def accept_text(cls, v: Any):
        if isinstance(v, str):
            return parse_ramp(v)
        return v

    @model_validator(mode="after")
    def ramp_within_clients(self):
        for step in self.ramp:
            if step.concurrency > self.client_concurrency:
                raise ValueError("degrau de rampa acima de client_concurrency")
        return self

    @property
    def closed_loop(self) -> bool:
        return not self.script

    @property
    def total_ops(self) -> int:
        return len(self.script) if self.script else self.op_count

    def concurrency_at(self, at_ms: float) -> int:
        if not self.ramp:
            return self.client_concurrency
        current = 0
        for step in self.ramp:
            if step.at_ms <= at_ms:
                current = step.concurrency
        return current


class MetricsSample(BaseModel):
    bucket_start_ms: float
    writes: int = 0
    reads: int = 0
    write_latency_mean_ms: float = 0.0
    write_latency_max_ms: float = 0.0
    read_latency_mean_ms: float = 0.0
    read_latency_max_ms: float = 0.0
    write_rps: float = 0.0
    read_rps: float = 0.0
    node_load: List[float] = Field(default_factory=list)
    net_sent_kb_s: List[float] = Field(default_factory=list)
    net_recv_kb_s: List[float] = Field(default_factory=list)


class LeaderChange(BaseModel):
    time_ms: float
    node: int
    epoch: Any  # term (Raft), ballot (Paxos)


class RunSummary(BaseModel):
    protocol: str
    nodes: int
    seed: int
    ops_completed: int = 0
    ops_incomplete: int = 0
    writes: int = 0
    reads: int = 0
    write_latency_mean_ms: float = 0.0
    write_latency_max_ms: float = 0.0
    read_latency_mean_ms: float = 0.0
    read_latency_max_ms: float = 0.0
    write_rps_mean: float = 0.0
    write_rps_cv: float = 0.0
    load_mean: float = 0.0
    load_variance: float = 0.0
    net_sent_kb: float = 0.0
    net_recv_kb: float = 0.0
    messages_sent: int = 0
    messages_dropped: int = 0
    first_crash_ms: Optional[float] = None
    availability_gap_ms: float = 0.0
    leader_changes: List[LeaderChange] = Field(default_factory=list)
    collisions: CollisionReport = Field(default_factory=CollisionReport)
    livelock: bool = False
    end_time_ms: float = 0.0
    trace_events: int = 0


class ComparisonRow(BaseModel):
    metric: str
    values: List[float]
    ratios: List[float]


# Pontos de referência medidos em VMs reais; documentação, não saída esperada.
REFERENCE_POINTS: Dict[str, Dict[str, float]] = {
    "write_latency_ms_per_op": {"paxos": 4000.0, "raft": 20.0},
    "read_latency_ms_per_op": {"paxos": 4.5, "raft": 2.2},
    "os_load": {"paxos": 2.0, "raft": 0.4},
    "write_requests_per_s": {"paxos": 14.0, "raft": 11.0},
}


class ComparisonReport(BaseModel):
    protocols: List[str]
    seed: int
    nodes: int
    rows: List[ComparisonRow]
    reference: Dict[str, Dict[str, float]] = Field(default_factory=lambda: dict(REFERENCE_POINTS))
    summaries: List[RunSummary] = Field(default_factory=list)
    samples: List[List[MetricsSample]] = Field(default_factory=list)
