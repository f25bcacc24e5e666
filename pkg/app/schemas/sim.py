# app/schemas/sim.py
from typing import Annotated, Any, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, computed_field, field_validator, model_validator

from app.schemas.common import NodeId


# ---------------------------------------------------------
# Modelos de latência
# ---------------------------------------------------------
class FixedLatency(BaseModel):
    kind: Literal["fixed"] = "fixed"
    ms: float = Field(..., ge=0)


class UniformLatency(BaseModel):
    kind: Literal["uniform"] = "uniform"
    min_ms: float = Field(..., ge=0)
    max_ms: float = Field(..., ge=0)

    @model_validator(mode="after")
    def check_range(self):
        if self.max_ms < self.min_ms:
            raise ValueError("max_ms deve ser >= min_ms")
        return self


class LogNormalLatency(BaseModel):
    kind: Literal["lognormal"] = "lognormal"
    mu: float
    sigma: float = Field(..., ge=0)


LatencyModel = Annotated[
    Union[FixedLatency, UniformLatency, LogNormalLatency],
    Field(discriminator="kind"),
]


def parse_latency(text: str) -> Union[FixedLatency, UniformLatency, LogNormalLatency]:
    """
    Converte a forma textual usada em arquivos/flags:
    - fixed:5
    - uniform:1:10
    - lognormal:1.0:0.5
    """
    parts = [p.strip() for p in str(text).split(":") if p.strip()]
    if not parts:
        raise ValueError("modelo de latência vazio")
    kind = parts[0].lower()
    try:
        if kind == "fixed" and len(parts) == 2:
            return FixedLatency(ms=float(parts[1]))
        if kind == "uniform" and len(parts) == 3:
            return UniformLatency(min_ms=float(parts[1]), max_ms=float(parts[2]))
        if kind == "lognormal" and len(parts) == 3:
            return LogNormalLatency(mu=float(parts[1]), sigma=float(parts[2]))
    except ValueError as e:
        raise ValueError(f"modelo de latência inválido '{text}': {e}") from e
    raise ValueError(f"modelo de latência inválido '{text}'")


# ---------------------------------------------------------
# Configuração do simulador
# ---------------------------------------------------------
class SimConfig(BaseModel):
    node_count: int = Field(..., ge=1)
    seed: int = Field(0, ge=0, lt=2**64)
    latency_model: LatencyModel = Field(default_factory=lambda: UniformLatency(min_ms=1, max_ms=10))
    drop_probability: float = Field(0.0, ge=0, le=1)
    duplicate_probability: float = Field(0.0, ge=0, le=1)
    max_virtual_time_ms: int = Field(600_000, gt=0)
    processing_cost_us: int = Field(100, ge=0)
    processing_cost_per_kb_us: int = Field(20, ge=0)
    settle_ms: int = Field(1000, ge=0)

    @field_validator("latency_model", mode="before")
    @classmethod
    def accept_text(cls, v: Any):
        if isinstance(v, str):
            return parse_latency(v)
        return v


# ---------------------------------------------------------
# Plano de falhas
# ---------------------------------------------------------
LEADER_TARGET = 0


class CrashSpec(BaseModel):
    """node = 0 derruba quem estiver liderando no instante do crash."""
    node: NodeId
    crash_at_ms: float = Field(..., ge=0)
    restart_at_ms: Optional[float] = None

    @model_validator(mode="after")
    def restart_after_crash(self):
        if self.restart_at_ms is not None and self.restart_at_ms <= self.crash_at_ms:
            raise ValueError("restart_at_ms deve ser > crash_at_ms")
        return self


class PartitionSpec(BaseModel):
    side_a: List[NodeId]
    side_b: List[NodeId]
    start_ms: float = Field(..., ge=0)
    end_ms: float

    @model_validator(mode="after")
    def well_formed(self):
        if self.end_ms <= self.start_ms:
            raise ValueError("end_ms deve ser > start_ms")
        if set(self.side_a) & set(self.side_b):
            raise ValueError("os lados da partição devem ser disjuntos")
        if not self.side_a or not self.side_b:
            raise ValueError("os dois lados da partição devem ter nós")
        return self

    def separates(self, a: int, b: int) -> bool:
        return (a in self.side_a and b in self.side_b) or (a in self.side_b and b in self.side_a)


class FaultPlan(BaseModel):
    crashes: List[CrashSpec] = Field(default_factory=list)
    partitions: List[PartitionSpec] = Field(default_factory=list)

    def check_nodes(self, node_count: int) -> None:
        for c in self.crashes:
            if c.node > node_count:
                raise ValueError(f"crash para nó inexistente: {c.node}")
        for p in self.partitions:
            for n in p.side_a + p.side_b:
                if not 1 <= n <= node_count:
                    raise ValueError(f"partição com nó inexistente: {n}")


# ---------------------------------------------------------
# Mensagem em trânsito e evento de trace
# ---------------------------------------------------------
class Envelope(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    id: int = Field(..., ge=0)
    src: NodeId
    dst: NodeId
    payload: Any
    sent_at_us: int
    deliver_at_us: int
    size_bytes: int = 0
    duplicate: bool = False

    @model_validator(mode="after")
    def causal(self):
        if self.deliver_at_us < self.sent_at_us:
            raise ValueError("deliver_at deve ser >= sent_at")
        return self


TraceKind = Literal[
    "send", "deliver", "drop", "timer", "crash", "restart",
    "decide", "apply", "client_req", "client_resp", "note",
]


class TraceEvent(BaseModel):
    seq: int = Field(..., ge=0)
    time_us: int = Field(..., ge=0)
    kind: TraceKind
    node: NodeId
    detail: Dict[str, Any] = Field(default_factory=dict)

    @computed_field
    @property
    def time_ms(self) -> float:
        return self.time_us / 1000
