# app/schemas/consensus.py
from enum import Enum
from typing import Any, Dict, Literal, Optional, Union

from pydantic import BaseModel, Field

from app.schemas.common import FrozenModel, NodeId
from app.schemas.queue import QueueCommand


class LogEntry(FrozenModel):
    """Um comando replicado: term (Raft), ballot (Paxos) ou round (CT) + índice."""
    term: int = Field(..., ge=0)
    index: int = Field(..., ge=1)
    command: QueueCommand


class Role(str, Enum):
    # Raft
    FOLLOWER = "follower"
    CANDIDATE = "candidate"
    LEADER = "leader"
    # Paxos
    PROPOSER_LEADER = "proposer-leader"
    ACCEPTOR = "acceptor"
    # Chandra-Toueg
    COORDINATOR = "coordinator"
    PARTICIPANT = "participant"
    # baseline sem consenso
    REPLICA = "replica"


class Message(FrozenModel):
    """Base das mensagens de protocolo. `type` é o discriminador no fio."""
    type: str

    def carried_bytes(self) -> int:
        # bytes de payload de aplicação que a mensagem transporta
        return 0


# ---------------------------------------------------------
# Eventos de entrada da função step
# ---------------------------------------------------------
class MessageEvent(FrozenModel):
    kind: Literal["message"] = "message"
    src: NodeId
    payload: Any
    now_us: int = 0


class TimerEvent(FrozenModel):
    kind: Literal["timer"] = "timer"
    label: str
    now_us: int = 0


class ClientRequestEvent(FrozenModel):
    kind: Literal["client_request"] = "client_request"
    client: int
    command: QueueCommand
    now_us: int = 0


ProtocolEvent = Union[MessageEvent, TimerEvent, ClientRequestEvent]


# ---------------------------------------------------------
# Ações de saída
# ---------------------------------------------------------
class Send(FrozenModel):
    kind: Literal["send"] = "send"
    dst: NodeId
    payload: Any


class Broadcast(FrozenModel):
    """Envia para todos os outros nós (nunca para si mesmo)."""
    kind: Literal["broadcast"] = "broadcast"
    payload: Any


class SetTimer(FrozenModel):
    """Arma (ou rearma) o timer `label`. O harness soma um jitter em [0, jitter_ms]."""
    kind: Literal["set_timer"] = "set_timer"
    label: str
    delay_ms: float = Field(..., ge=0)
    jitter_ms: float = Field(0, ge=0)


class CancelTimer(FrozenModel):
    kind: Literal["cancel_timer"] = "cancel_timer"
    label: str


class Apply(FrozenModel):
    kind: Literal["apply"] = "apply"
    index: int = Field(..., ge=1)
    command: QueueCommand
    term: int = 0


class Respond(FrozenModel):
    """
    Resposta ao cliente. result["status"]:
    - "committed": o harness completa com o resultado da aplicação do comando
    - "read": leitura confirmada; o harness lê a máquina de estados
    - "ok": resultado já calculado pelo protocolo (baseline)
    - "redirect": tente outro nó (result["leader"] = dica, se houver)
    """
    kind: Literal["respond"] = "respond"
    client: int
    command_id: str
    result: Dict[str, Any]


class Persist(FrozenModel):
    kind: Literal["persist"] = "persist"
    delta: Dict[str, Any]


class Note(FrozenModel):
    """Anotação estruturada no trace (líder eleito, coleta do coordenador, ...)."""
    kind: Literal["note"] = "note"
    event: str
    data: Dict[str, Any] = Field(default_factory=dict)


Action = Union[Send, Broadcast, SetTimer, CancelTimer, Apply, Respond, Persist, Note]


class ProtocolParams(BaseModel):
    """Constantes de tempo dos protocolos; viajam no trace (registro boot)."""
    election_timeout_min_ms: float = 150
    election_timeout_max_ms: float = 300
    heartbeat_ms: float = 50
    leader_timeout_min_ms: float = 300
    leader_timeout_max_ms: float = 450
    fd_timeout_ms: float = 200
    fd_heartbeat_ms: float = 50
    retry_ms: float = 100
    sync_delay_ms: float = 100
    check_promise: bool = True

    @classmethod
    def from_settings(cls, **overrides) -> "ProtocolParams":
        from app.core.config import settings
        data = dict(
            election_timeout_min_ms=settings.ELECTION_TIMEOUT_MIN_MS,
            election_timeout_max_ms=settings.ELECTION_TIMEOUT_MAX_MS,
            heartbeat_ms=settings.HEARTBEAT_MS,
            leader_timeout_min_ms=settings.LEADER_TIMEOUT_MIN_MS,
            leader_timeout_max_ms=settings.LEADER_TIMEOUT_MAX_MS,
            fd_timeout_ms=settings.FD_TIMEOUT_MS,
            fd_heartbeat_ms=settings.FD_HEARTBEAT_MS,
            retry_ms=settings.RETRY_MS,
        )
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**data)


class NodeStateBase(BaseModel):
    """Campos comuns a todo estado de réplica."""
    node_id: NodeId
    n: int = Field(..., ge=1)
    known_leader: Optional[int] = None

    def peers(self) -> list[int]:
        return [p for p in range(1, self.n + 1) if p != self.node_id]
