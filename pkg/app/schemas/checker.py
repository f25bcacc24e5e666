# app/schemas/checker.py
from typing import List, Literal

from pydantic import BaseModel, Field

from app.schemas.sim import TraceEvent

Property = Literal[
    # propriedades clássicas de consenso
    "agreement", "validity", "integrity", "termination",
    # Raft
    "raft_state_machine_safety", "raft_election_safety", "raft_log_matching", "raft_leader_completeness",
    # Paxos / Chandra-Toueg
    "paxos_single_value", "ct_locked_value",
    # invariantes do simulador
    "causality", "dead_silence", "partition_soundness", "monotone_time",
    "apply_monotonicity", "closed_loop_bound",
    # fila
    "duplicate_pop", "ghost_job",
]


class Violation(BaseModel):
    property: Property
    time_ms: float = Field(..., ge=0)
    nodes: List[int] = Field(default_factory=list)
    message: str = ""
    evidence: List[TraceEvent] = Field(default_factory=list)
    evidence_offsets: List[int] = Field(default_factory=list, description="seq dos eventos de evidência")


class CheckReport(BaseModel):
    violations: List[Violation] = Field(default_factory=list)
    not_applicable: List[str] = Field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


class ModelCheckResult(BaseModel):
    """Exploração exaustiva limitada de um slot de Paxos."""
    ok: bool
    check_promise: bool = True
    max_depth: int
    states_explored: int = 0
    chosen: List[str] = Field(default_factory=list, description="Valores escolhidos no estado violador")
    path: List[str] = Field(default_factory=list, description="Passos até a violação")
