# app/schemas/queue.py
from typing import Literal, Optional, Tuple, Dict

from pydantic import BaseModel, Field

from app.schemas.common import FrozenModel

QueueOp = Literal["enqueue", "pop", "complete", "read", "noop"]


class Job(FrozenModel):
    id: int = Field(..., ge=0, description="Identificador único do job na execução")
    payload_bytes: int = Field(0, ge=0)
    enqueued_at_ms: float = Field(0.0, ge=0)


class QueueCommand(FrozenModel):
    """
    Comando da fila replicada. Único caminho de mutação no modo com consenso.
    - enqueue(job) / pop(worker = client) / complete(job_id) / read (somente leitura)
    - noop preenche lacunas do log (Paxos/Raft)
    """
    id: str
    client: int = 0
    seq: int = 0
    op: QueueOp
    job: Optional[Job] = None
    job_id: Optional[int] = None

    @property
    def payload_bytes(self) -> int:
        return self.job.payload_bytes if self.job else 0

    @property
    def is_write(self) -> bool:
        return self.op in ("enqueue", "pop", "complete")


NOOP = QueueCommand(id="noop", op="noop")


class QueueState(FrozenModel):
    """Estado da fila: FIFO pendente, jobs em execução (pop sem complete) e concluídos."""
    pending: Tuple[Job, ...] = ()
    in_progress: Dict[int, int] = Field(default_factory=dict)  # job_id -> worker
    done: Tuple[int, ...] = ()
    enqueued: int = 0
    popped: int = 0


class CollisionReport(BaseModel):
    duplicate_pops: int = Field(0, ge=0, description="Jobs entregues a >= 2 workers")
    ghost_jobs: int = Field(0, ge=0, description="Jobs retirados sem nunca terem sido enfileirados")
    duplicate_job_ids: list[int] = Field(default_factory=list)
    ghost_job_ids: list[int] = Field(default_factory=list)
