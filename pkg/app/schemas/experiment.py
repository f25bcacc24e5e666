# app/schemas/experiment.py
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

from app.schemas.bench import MetricsSample, RunSummary, WorkloadSpec
from app.schemas.checker import CheckReport
from app.schemas.consensus import ProtocolParams
from app.schemas.sim import FaultPlan, LatencyModel, SimConfig, TraceEvent, parse_latency

ProtocolName = Literal["raft", "paxos", "ct", "baseline"]


def _default_latency():
    from app.core.config import settings
    return parse_latency(settings.DEFAULT_LATENCY)


def _default_params():
    return ProtocolParams.from_settings()


class NetworkConfig(BaseModel):
    """Campos de rede/execução do SimConfig (node_count e seed vêm do experimento)."""
    latency_model: LatencyModel = Field(default_factory=_default_latency)
    drop_probability: float = Field(0.0, ge=0, le=1)
    duplicate_probability: float = Field(0.0, ge=0, le=1)
    max_virtual_time_ms: Optional[int] = Field(None, gt=0)
    processing_cost_us: Optional[int] = Field(None, ge=0)
    processing_cost_per_kb_us: Optional[int] = Field(None, ge=0)
    settle_ms: Optional[int] = Field(None, ge=0)

    @field_validator("latency_model", mode="before")
    @classmethod
    def accept_text(cls, v: Any):
        if isinstance(v, str):
            return parse_latency(v)
        return v


class ExperimentConfig(BaseModel):
    protocol: ProtocolName = "raft"
    nodes: int = Field(4, ge=1)
    seed: int = Field(0, ge=0, lt=2**64)
    workload: WorkloadSpec = Field(default_factory=WorkloadSpec)
    network: NetworkConfig = Field(default_factory=NetworkConfig)
    faults: FaultPlan = Field(default_factory=FaultPlan)
    params: ProtocolParams = Field(default_factory=_default_params)
    bucket_ms: Optional[int] = Field(None, gt=0)
    check: bool = False
    out_dir: Optional[str] = None

    @model_validator(mode="after")
    def consistent(self):
        self.faults.check_nodes(self.nodes)
        for op in self.workload.script:
            if op.node > self.nodes:
                raise ValueError(f"operação roteirizada para nó inexistente: {op.node}")
        return self

    def sim_config(self) -> SimConfig:
        from app.core.config import settings
        net = self.network
        return SimConfig(
            node_count=self.nodes,
            seed=self.seed,
            latency_model=net.latency_model,
            drop_probability=net.drop_probability,
            duplicate_probability=net.duplicate_probability,
            max_virtual_time_ms=net.max_virtual_time_ms or settings.MAX_VIRTUAL_TIME_MS,
            processing_cost_us=settings.PROCESSING_COST_US if net.processing_cost_us is None else net.processing_cost_us,
            processing_cost_per_kb_us=(
                settings.PROCESSING_COST_PER_KB_US
                if net.processing_cost_per_kb_us is None
                else net.processing_cost_per_kb_us
            ),
            settle_ms=settings.SETTLE_MS if net.settle_ms is None else net.settle_ms,
        )

    def effective_bucket_ms(self) -> int:
        from app.core.config import settings
        return self.bucket_ms or settings.BUCKET_MS

    def comparable_key(self) -> Dict[str, Any]:
        """Tudo menos o protocolo e o destino dos artefatos."""
        data = self.model_dump(mode="json", exclude={"protocol", "out_dir", "check"})
        return data


class RunResult(BaseModel):
    config: ExperimentConfig
    summary: RunSummary
    samples: List[MetricsSample] = Field(default_factory=list)
    check: Optional[CheckReport] = None
    trace: List[TraceEvent] = Field(default_factory=list, exclude=True)


class ReplayResult(BaseModel):
    ok: bool
    protocol: Optional[str] = None
    nodes: int = 0
    events: int = 0
    mismatches: List[str] = Field(default_factory=list)
    final_states: Dict[int, Dict[str, Any]] = Field(default_factory=dict)
    check: CheckReport = Field(default_factory=CheckReport)
