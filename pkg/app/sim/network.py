# app/sim/network.py
import logging
from typing import List, NamedTuple, Optional

from pydantic import BaseModel

from app.schemas.common import ms_to_us
from app.schemas.sim import (
    Envelope, FaultPlan, FixedLatency, LogNormalLatency, SimConfig, UniformLatency,
)
from app.sim import rng as streams

log = logging.getLogger(__name__)

# cabeçalho fixo por mensagem (origem, destino, id, tipo)
HEADER_BYTES = 32


def message_size(payload) -> int:
    """Estimativa de bytes serializados: JSON do envelope + payload de aplicação transportado."""
    if isinstance(payload, BaseModel):
        size = HEADER_BYTES + len(payload.model_dump_json())
        carried = getattr(payload, "carried_bytes", None)
        if callable(carried):
            size += carried()
        return size
    return HEADER_BYTES + len(repr(payload))


class SendOutcome(NamedTuple):
    env_id: int
    size_bytes: int
    drop_reason: Optional[str]
    deliveries: List[Envelope]


class Network:
    """
    Modelo de rede: latência amostrada, perdas, duplicação e partições do FaultPlan.
    Cada send consome exatamente uma amostra de perda e uma de duplicação.
    """

    def __init__(self, config: SimConfig, faults: FaultPlan, rngs: streams.RngStreams):
        self.config = config
        self.faults = faults
        self._latency = rngs.stream(streams.LATENCY)
        self._drop = rngs.stream(streams.DROP)
        self._dup = rngs.stream(streams.DUPLICATE)
        self._next_id = 0

    def sample_latency_us(self) -> int:
        model = self.config.latency_model
        if isinstance(model, FixedLatency):
            ms = model.ms
        elif isinstance(model, UniformLatency):
            ms = self._latency.uniform(model.min_ms, model.max_ms)
        elif isinstance(model, LogNormalLatency):
            ms = self._latency.lognormvariate(model.mu, model.sigma)
        else:
            raise ValueError(f"modelo de latência desconhecido: {model!r}")
        return max(0, ms_to_us(ms))

    def partitioned(self, a: int, b: int, at_us: int) -> bool:
        for p in self.faults.partitions:
            if ms_to_us(p.start_ms) <= at_us < ms_to_us(p.end_ms) and p.separates(a, b):
                return True
        return False

    def send(self, src: int, dst: int, payload, now_us: int) -> SendOutcome:
        env_id = self._next_id
        self._next_id += 1
        size = message_size(payload)

        drop_draw = self._drop.random()
        dup_draw = self._dup.random()

        if self.partitioned(src, dst, now_us):
            return SendOutcome(env_id, size, "partition", [])
        if drop_draw < self.config.drop_probability:
            return SendOutcome(env_id, size, "loss", [])

        deliveries = [
            Envelope(
                id=env_id, src=src, dst=dst, payload=payload, size_bytes=size,
                sent_at_us=now_us, deliver_at_us=now_us + self.sample_latency_us(),
            )
        ]
        if dup_draw < self.config.duplicate_probability:
            deliveries.append(
                Envelope(
                    id=env_id, src=src, dst=dst, payload=payload, size_bytes=size, duplicate=True,
                    sent_at_us=now_us, deliver_at_us=now_us + self.sample_latency_us(),
                )
            )
        return SendOutcome(env_id, size, None, deliveries)
