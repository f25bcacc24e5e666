# app/schemas/ct.py
from typing import Annotated, Dict, FrozenSet, List, Literal, Optional, Tuple, Union

from pydantic import Field, TypeAdapter

from app.schemas.common import FrozenModel
from app.schemas.consensus import Message, NodeStateBase
from app.schemas.queue import QueueCommand


# ---------------------------------------------------------
# Mensagens (uma instância de consenso por slot)
# ---------------------------------------------------------
class Preference(Message):
    """Passo 1: (r, preference, timestamp) para o coordenador."""
    type: Literal["preference"] = "preference"
    slot: int
    round: int
    value: QueueCommand
    timestamp: int
    # distingue "adotado no round 0" de "nunca adotado" (ambos com timestamp 0)
    adopted: bool = False

    def carried_bytes(self) -> int:
        return self.value.payload_bytes


class CoordValue(Message):
    """Passo 3: (r, preference) do coordenador para todos."""
    type: Literal["coord_value"] = "coord_value"
    slot: int
    round: int
    value: QueueCommand

    def carried_bytes(self) -> int:
        return self.value.payload_bytes


class Ack(Message):
    type: Literal["ack"] = "ack"
    slot: int
    round: int


class Nack(Message):
    type: Literal["nack"] = "nack"
    slot: int
    round: int


class Decide(Message):
    type: Literal["decide"] = "decide"
    slot: int
    value: QueueCommand

    def carried_bytes(self) -> int:
        return self.value.payload_bytes


class DecisionQuery(Message):
    type: Literal["decision_query"] = "decision_query"
    slot: int


class RoundSync(Message):
    """Informa o round corrente do remetente; quem está atrás salta para ele."""
    type: Literal["round_sync"] = "round_sync"
    slot: int
    round: int


class Alive(Message):
    """Heartbeat do detector de falhas; leva o prefixo decidido do remetente."""
    type: Literal["alive"] = "alive"
    decided_upto: int = 0


CTMessage = Annotated[
    Union[Preference, CoordValue, Ack, Nack, Decide, DecisionQuery, RoundSync, Alive],
    Field(discriminator="type"),
]
ct_message_adapter = TypeAdapter(CTMessage)


# ---------------------------------------------------------
# Estado
# ---------------------------------------------------------
class FailureDetectorState(FrozenModel):
    last_heard: Dict[int, int] = Field(default_factory=dict)  # nó -> µs virtual
    suspect_after_us: int
    initial_us: int
    suspected: FrozenSet[int] = frozenset()

    def is_suspected(self, node: int) -> bool:
        return node in self.suspected


class CollectedPreference(FrozenModel):
    node: int
    value: QueueCommand
    timestamp: int
    adopted: bool = False


class CTState(NodeStateBase):
    # duráveis: decisões e a preferência corrente (valor travado não pode se perder)
    decided: Dict[int, QueueCommand] = Field(default_factory=dict)
    slot: int = 1
    round: int = 0
    preference: Optional[QueueCommand] = None
    timestamp: int = 0
    adopted: bool = False
    # instância corrente
    active: bool = False
    waiting_coord: bool = False
    answers: Dict[int, bool] = Field(default_factory=dict)  # round -> ack?
    # papel de coordenador no round corrente
    collected: Dict[int, CollectedPreference] = Field(default_factory=dict)
    coord_value: Optional[QueueCommand] = None
    responses: Dict[int, bool] = Field(default_factory=dict)
    # comandos de clientes ainda não decididos
    pending: Tuple[QueueCommand, ...] = ()
    clients: Dict[str, int] = Field(default_factory=dict)
    applied_upto: int = 0
    fd: FailureDetectorState

    @property
    def decided_upto(self) -> int:
        k = 0
        while (k + 1) in self.decided:
            k += 1
        return k

    def decided_summary(self) -> List[List]:
        return [[s, self.decided[s].id] for s in sorted(self.decided)]
