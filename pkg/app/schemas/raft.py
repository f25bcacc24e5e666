# app/schemas/raft.py
import hashlib
from typing import Annotated, Dict, FrozenSet, List, Literal, Optional, Tuple, Union

from pydantic import Field, TypeAdapter

from app.schemas.common import FrozenModel
from app.schemas.consensus import LogEntry, Message, NodeStateBase, Role


# ---------------------------------------------------------
# Mensagens (2 RPCs + respostas)
# ---------------------------------------------------------
class RequestVote(Message):
    type: Literal["request_vote"] = "request_vote"
    term: int
    last_log_index: int
    last_log_term: int


class VoteReply(Message):
    type: Literal["vote_reply"] = "vote_reply"
    term: int
    granted: bool


class AppendEntries(Message):
    type: Literal["append_entries"] = "append_entries"
    term: int
    prev_index: int
    prev_term: int
    entries: Tuple[LogEntry, ...] = ()
    leader_commit: int = 0
    read_seq: int = 0

    def carried_bytes(self) -> int:
        return sum(e.command.payload_bytes for e in self.entries)


class AppendReply(Message):
    type: Literal["append_reply"] = "append_reply"
    term: int
    success: bool
    match_index: int = 0
    conflict_index: int = 0
    read_seq: int = 0


RaftMessage = Annotated[
    Union[RequestVote, VoteReply, AppendEntries, AppendReply],
    Field(discriminator="type"),
]
raft_message_adapter = TypeAdapter(RaftMessage)


# ---------------------------------------------------------
# Estado da réplica
# ---------------------------------------------------------
class PendingRead(FrozenModel):
    client: int
    command_id: str
    read_index: int
    read_seq: int


class RaftState(NodeStateBase):
    # duráveis
    current_term: int = 0
    voted_for: Optional[int] = None
    log: Tuple[LogEntry, ...] = ()
    # voláteis
    commit_index: int = 0
    last_applied: int = 0
    role: Role = Role.FOLLOWER
    next_index: Dict[int, int] = Field(default_factory=dict)
    match_index: Dict[int, int] = Field(default_factory=dict)
    # pares com AppendEntries sem resposta: no máximo um por par
    in_flight: FrozenSet[int] = frozenset()
    votes_received: FrozenSet[int] = frozenset()
    election_deadline_us: int = 0
    # leituras confirmadas por rodada de heartbeat
    read_seq: int = 0
    acked_seq: Dict[int, int] = Field(default_factory=dict)
    pending_reads: Tuple[PendingRead, ...] = ()
    # índice do log -> (cliente, id do comando) aguardando commit
    waiting: Dict[int, Tuple[int, str]] = Field(default_factory=dict)

    @property
    def last_log_index(self) -> int:
        return len(self.log)

    @property
    def last_log_term(self) -> int:
        return self.log[-1].term if self.log else 0

    def term_at(self, index: int) -> int:
        if index <= 0 or index > len(self.log):
            return 0
        return self.log[index - 1].term

    def log_summary(self) -> List[List]:
        return [[e.term, e.command.id] for e in self.log]

    def prefix_digest(self, index: int) -> str:
        """Resumo do prefixo 1..index (termo e comando de cada entrada)."""
        text = "".join(f"{e.term}:{e.command.id}|" for e in self.log[:index])
        return hashlib.blake2b(text.encode(), digest_size=8).hexdigest()
