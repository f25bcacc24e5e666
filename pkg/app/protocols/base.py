# app/protocols/base.py
"""
Contrato comum dos protocolos: uma função step pura de (estado, evento) para
(estado, ações). Estados são copy-on-write: qualquer contêiner alterado vira
um objeto novo, o que permite detectar mudanças nos campos duráveis por
identidade e emitir `Persist` automaticamente.
"""
import logging
from abc import ABC, abstractmethod
from typing import Any, ClassVar, Dict, List, Optional, Tuple, Type

from pydantic import BaseModel, TypeAdapter, ValidationError

from app.schemas.consensus import (
    Action, ClientRequestEvent, MessageEvent, Note, NodeStateBase, Persist,
    ProtocolEvent, ProtocolParams, TimerEvent,
)

log = logging.getLogger(__name__)

StepResult = Tuple[NodeStateBase, List[Action]]


class Protocol(ABC):
    name: ClassVar[str]
    durable_fields: ClassVar[Tuple[str, ...]] = ()
    message_types: ClassVar[Tuple[type, ...]] = ()
    message_adapter: ClassVar[Optional[TypeAdapter]] = None

    def __init__(self, params: Optional[ProtocolParams] = None):
        self.params = params or ProtocolParams.from_settings()

    # -----------------------------------------------------
    # ciclo de vida
    # -----------------------------------------------------
    @abstractmethod
    def init_state(self, node_id: int, n: int) -> NodeStateBase:
        ...

    def boot(self, state: NodeStateBase, now_us: int) -> StepResult:
        """Temporizadores iniciais (no início da execução e após restart)."""
        return state, []

    def restore(self, node_id: int, n: int, durable: Dict[str, Any]) -> NodeStateBase:
        state = self.init_state(node_id, n)
        known = {k: v for k, v in durable.items() if k in self.durable_fields}
        return state.model_copy(update=known)

    def start(self, state: NodeStateBase, now_us: int) -> StepResult:
        new_state, actions = self.boot(state, now_us)
        return new_state, self._with_persist(state, new_state, actions)

    # -----------------------------------------------------
    # step
    # -----------------------------------------------------
    def step(self, state: NodeStateBase, event: ProtocolEvent) -> StepResult:
        if isinstance(event, MessageEvent):
            try:
                payload = self.decode(event.payload)
            except ValidationError as e:
                return state, [Note(event="malformed", data={"src": event.src, "error": e.errors()[0].get("msg", "")})]
            if payload is None:
                return state, []
            if payload is not event.payload:
                event = event.model_copy(update={"payload": payload})
        elif not isinstance(event, (TimerEvent, ClientRequestEvent)):
            return state, []

        new_state, actions = self.handle(state, event)
        return new_state, self._with_persist(state, new_state, actions)

    @abstractmethod
    def handle(self, state: NodeStateBase, event: ProtocolEvent) -> StepResult:
        ...

    def decode(self, payload: Any):
        """
        Mensagem do próprio protocolo -> ela mesma; outro tipo de mensagem -> None
        (ignorada); forma de fio (dict/JSON) -> validada pelo adapter.
        """
        if isinstance(payload, self.message_types):
            return payload
        if isinstance(payload, BaseModel) or self.message_adapter is None:
            return None
        if isinstance(payload, (str, bytes)):
            return self.message_adapter.validate_json(payload)
        return self.message_adapter.validate_python(payload)

    def _with_persist(self, old: NodeStateBase, new: NodeStateBase, actions: List[Action]) -> List[Action]:
        delta = {
            f: getattr(new, f)
            for f in self.durable_fields
            if getattr(new, f) is not getattr(old, f)
        }
        if not delta:
            return actions
        # grava antes de qualquer efeito visível
        return [Persist(delta=delta)] + list(actions)

    # -----------------------------------------------------
    # consultas usadas pelo harness
    # -----------------------------------------------------
    def is_leader(self, state: NodeStateBase) -> bool:
        return False

    def epoch(self, state: NodeStateBase) -> Any:
        return None

    def summary(self, state: NodeStateBase) -> Dict[str, Any]:
        return {}

    def backlog(self, state: NodeStateBase) -> int:
        """Comandos de clientes retidos no nó à espera de uma instância de consenso."""
        return 0

    def initial_target(self, client: int, n: int) -> int:
        return (client % n) + 1

    def next_target(self, current: int, n: int) -> int:
        return (current % n) + 1


# ---------------------------------------------------------
# Registro por nome
# ---------------------------------------------------------
_REGISTRY: Dict[str, Type[Protocol]] = {}


def register_protocol(cls: Type[Protocol]) -> Type[Protocol]:
    _REGISTRY[cls.name] = cls
    return cls


def protocol_names() -> List[str]:
    _load_builtin()
    return sorted(_REGISTRY)


def get_protocol(name: str, params: Optional[ProtocolParams] = None) -> Protocol:
    _load_builtin()
    try:
        cls = _REGISTRY[name]
    except KeyError:
        raise ValueError(f"protocolo desconhecido: {name}") from None
    return cls(params)


def _load_builtin() -> None:
    # importa para registrar
    from app.protocols import baseline, ct, paxos, raft  # noqa: F401
