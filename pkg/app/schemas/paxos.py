# app/schemas/paxos.py
from typing import Annotated, Dict, FrozenSet, List, Literal, NamedTuple, Optional, Tuple, Union

from pydantic import Field, TypeAdapter

from app.schemas.common import FrozenModel
from app.schemas.consensus import Message, NodeStateBase, Role
from app.schemas.queue import QueueCommand


class Ballot(NamedTuple):
    """Ordem total lexicográfica por (counter, proposer)."""
    counter: int
    proposer: int


BOTTOM = Ballot(0, 0)


class AcceptedValue(FrozenModel):
    slot: int
    ballot: Ballot
    command: QueueCommand


class ChosenValue(FrozenModel):
    slot: int
    command: QueueCommand


# ---------------------------------------------------------
# Mensagens
# ---------------------------------------------------------
class Prepare(Message):
    """Mensagem 'proposed': o remetente quer liderar com `ballot`."""
    type: Literal["prepare"] = "prepare"
    ballot: Ballot
    from_slot: int = 1


class Promise(Message):
    type: Literal["promise"] = "promise"
    ballot: Ballot
    accepted: Tuple[AcceptedValue, ...] = ()
    chosen: Tuple[ChosenValue, ...] = ()

    def carried_bytes(self) -> int:
        return sum(a.command.payload_bytes for a in self.accepted) + sum(
            c.command.payload_bytes for c in self.chosen
        )


class Reject(Message):
    type: Literal["reject"] = "reject"
    ballot: Ballot
    promised: Ballot


class Accept(Message):
    type: Literal["accept"] = "accept"
    ballot: Ballot
    slot: int
    command: QueueCommand

    def carried_bytes(self) -> int:
        return self.command.payload_bytes


class Accepted(Message):
    type: Literal["accepted"] = "accepted"
    ballot: Ballot
    slot: int


class AcceptReject(Message):
    type: Literal["accept_reject"] = "accept_reject"
    ballot: Ballot
    slot: int
    promised: Ballot


class Commit(Message):
    type: Literal["commit"] = "commit"
    slot: int
    command: QueueCommand

    def carried_bytes(self) -> int:
        return self.command.payload_bytes


class LeaderHeartbeat(Message):
    type: Literal["leader_heartbeat"] = "leader_heartbeat"
    ballot: Ballot
    chosen_upto: int


class CatchUp(Message):
    type: Literal["catch_up"] = "catch_up"
    from_slot: int


PaxosMessage = Annotated[
    Union[Prepare, Promise, Reject, Accept, Accepted, AcceptReject, Commit, LeaderHeartbeat, CatchUp],
    Field(discriminator="type"),
]
paxos_message_adapter = TypeAdapter(PaxosMessage)


# ---------------------------------------------------------
# Estado da réplica
# ---------------------------------------------------------
class PaxosState(NodeStateBase):
    # duráveis
    promised: Ballot = BOTTOM
    accepted: Dict[int, AcceptedValue] = Field(default_factory=dict)
    chosen: Dict[int, QueueCommand] = Field(default_factory=dict)
    # voláteis
    role: Role = Role.ACCEPTOR
    leader_ballot: Optional[Ballot] = None
    max_seen_counter: int = 0
    preparing: bool = False
    promises: Dict[int, Promise] = Field(default_factory=dict)
    recovered: Dict[int, AcceptedValue] = Field(default_factory=dict)
    ack_tally: Dict[int, FrozenSet[int]] = Field(default_factory=dict)
    in_flight: Optional[AcceptedValue] = None
    next_slot: int = 1
    pending: Tuple[Tuple[int, QueueCommand], ...] = ()  # (cliente, comando)
    clients: Dict[str, int] = Field(default_factory=dict)  # id do comando -> cliente
    applied_upto: int = 0

    @property
    def chosen_upto(self) -> int:
        """Maior slot k tal que 1..k estão escolhidos."""
        k = self.applied_upto
        while (k + 1) in self.chosen:
            k += 1
        return k

    def chosen_summary(self) -> List[List]:
        return [[s, self.chosen[s].id] for s in sorted(self.chosen)]
