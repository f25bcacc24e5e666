# app/schemas/baseline.py
from typing import Annotated, Dict, FrozenSet, Literal, Tuple, Union

from pydantic import Field, TypeAdapter

from app.schemas.consensus import Message, NodeStateBase
from app.schemas.queue import Job


class JobAnnounce(Message):
    type: Literal["job_announce"] = "job_announce"
    job: Job

    def carried_bytes(self) -> int:
        return self.job.payload_bytes


class RemovalSync(Message):
    """Troca periódica do conjunto completo de remoções (anti-entropia)."""
    type: Literal["removal_sync"] = "removal_sync"
    removed: Tuple[int, ...]


BaselineMessage = Annotated[Union[JobAnnounce, RemovalSync], Field(discriminator="type")]
baseline_message_adapter = TypeAdapter(BaselineMessage)


class BaselineState(NodeStateBase):
    known: Dict[int, Job] = Field(default_factory=dict)
    removed: FrozenSet[int] = frozenset()
    sync_delay_ms: float = 100
