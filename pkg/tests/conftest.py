from typing import Any, List, Optional

import pytest

from app.core.config import settings
from app.schemas.bench import WorkloadSpec
from app.schemas.consensus import ProtocolParams
from app.schemas.experiment import ExperimentConfig, NetworkConfig
from app.schemas.queue import Job, QueueCommand
from app.schemas.sim import FaultPlan, TraceEvent
from app.sim.trace import END_NOTE


@pytest.fixture(autouse=True)
def output_dir(tmp_path, monkeypatch):
    """Artefatos de cada teste vão para um diretório temporário."""
    out = tmp_path / "runs"
    monkeypatch.setattr(settings, "OUTPUT_DIR", str(out))
    return out


def small_config(
    protocol: str = "raft",
    nodes: int = 3,
    ops: int = 30,
    seed: int = 1,
    clients: int = 2,
    faults: Optional[FaultPlan] = None,
    **network: Any,
) -> ExperimentConfig:
    return ExperimentConfig(
        protocol=protocol,
        nodes=nodes,
        seed=seed,
        workload=WorkloadSpec(op_count=ops, client_concurrency=clients, payload_bytes=100, mix=0.8, pop_fraction=0.3),
        network=NetworkConfig(**network),
        faults=faults or FaultPlan(),
        params=ProtocolParams.from_settings(),
        check=True,
    )


@pytest.fixture
def make_config():
    return small_config


def enqueue(client: int, seq: int, job_id: int) -> QueueCommand:
    return QueueCommand(id=f"c{client}-{seq}", client=client, seq=seq, op="enqueue", job=Job(id=job_id))


def pop(client: int, seq: int) -> QueueCommand:
    return QueueCommand(id=f"c{client}-{seq}", client=client, seq=seq, op="pop")


class TraceBuilder:
    """Monta traces à mão para os fixtures do verificador."""

    def __init__(self) -> None:
        self.events: List[TraceEvent] = []

    def add(self, kind: str, node: int, time_ms: float = 0.0, **detail: Any) -> TraceEvent:
        ev = TraceEvent(seq=len(self.events), time_us=int(time_ms * 1000), kind=kind, node=node, detail=detail)
        self.events.append(ev)
        return ev

    def boot(self, protocol: str = "raft", n: int = 3, clients: int = 1, closed_loop: bool = True) -> "TraceBuilder":
        for node in range(1, n + 1):
            self.add("timer", node, label="boot", protocol=protocol, n=n, params={}, clients=clients, closed_loop=closed_loop)
        return self

    def note(self, node: int, event: str, time_ms: float = 0.0, **data: Any) -> TraceEvent:
        return self.add("note", node, time_ms, event=event, **data)

    def decide(self, node: int, index: int, value: str, time_ms: float = 0.0) -> TraceEvent:
        return self.add("decide", node, time_ms, index=index, term=0, value=value, op="enqueue")

    def request(self, cmd: QueueCommand, node: int = 1, time_ms: float = 0.0) -> TraceEvent:
        return self.add(
            "client_req", node, time_ms,
            client=cmd.client, command=cmd.model_dump(mode="json"), attempt=1,
            issued_us=int(time_ms * 1000), cost_us=0, wait_us=0,
        )

    def response(self, cmd: QueueCommand, result: dict, time_ms: float = 0.0, served_by: int = 1, issued_ms: float = 0.0) -> TraceEvent:
        return self.add(
            "client_resp", 0, time_ms,
            client=cmd.client, command_id=cmd.id, op=cmd.op, status="committed", result=result,
            latency_us=int((time_ms - issued_ms) * 1000), issued_us=int(issued_ms * 1000),
            served_by=served_by, attempts=1,
        )

    def close(self) -> List[TraceEvent]:
        last = self.events[-1].time_ms if self.events else 0.0
        self.add("note", 0, last, event=END_NOTE)
        return self.events


@pytest.fixture
def trace_builder():
    return TraceBuilder
