# app/protocols/ct.py
"""
Chandra-Toueg com coordenador rotativo sobre um detector de falhas
eventualmente forte (timeouts adaptativos). Uma instância de consenso por
slot do log, executadas em sequência.

Round r de uma instância:
  1. todos enviam (r, preferência, timestamp) ao coordenador (r mod n)+1
  2. o coordenador espera a maioria e escolhe o timestamp mais recente
  3. o coordenador difunde (r, preferência)
  4. participante adota e responde ack(r), ou nack(r) se suspeitar do coordenador
  5. com maioria de acks o coordenador difunde decide
  6. quem recebe decide pela primeira vez retransmite e decide
"""
import logging
from typing import Dict, Iterable, List, Optional

from app.protocols.base import Protocol, StepResult, register_protocol
from app.schemas.common import majority, ms_to_us
from app.schemas.consensus import (
    Action, Apply, Broadcast, ClientRequestEvent, MessageEvent, Note, Respond, Role,
    Send, SetTimer, TimerEvent,
)
from app.schemas.ct import (
    Ack, Alive, CTState, CollectedPreference, CoordValue, Decide, DecisionQuery,
    FailureDetectorState, Nack, Preference, RoundSync, ct_message_adapter,
)
from app.schemas.queue import QueueCommand

log = logging.getLogger(__name__)

FD_TICK = "fd"
RETRY = "retry"
FD_MAX_FACTOR = 16


def coordinator_of(round_: int, n: int) -> int:
    if n < 1:
        raise ValueError("n deve ser >= 1")
    return (round_ % n) + 1


def coordinator_collect(msgs: Iterable[CollectedPreference]) -> CollectedPreference:
    """Timestamp mais recente; empate pelo menor id de remetente."""
    msgs = list(msgs)
    if not msgs:
        raise ValueError("nenhuma preferência coletada")
    return max(msgs, key=lambda c: (c.timestamp, c.adopted, -c.node))


@register_protocol
class ChandraTouegProtocol(Protocol):
    name = "ct"
    durable_fields = ("decided", "slot", "round", "preference", "timestamp", "adopted")
    message_types = (Preference, CoordValue, Ack, Nack, Decide, DecisionQuery, RoundSync, Alive)
    message_adapter = ct_message_adapter

    def init_state(self, node_id: int, n: int) -> CTState:
        initial = ms_to_us(self.params.fd_timeout_ms)
        return CTState(node_id=node_id, n=n, fd=FailureDetectorState(suspect_after_us=initial, initial_us=initial))

    def boot(self, s: CTState, now_us: int) -> StepResult:
        fd = s.fd.model_copy(update={"last_heard": {p: now_us for p in s.peers()}, "suspected": frozenset()})
        s = s.model_copy(update={"fd": fd})
        actions: List[Action] = [
            Broadcast(payload=Alive(decided_upto=s.decided_upto)),
            SetTimer(label=FD_TICK, delay_ms=self.params.fd_heartbeat_ms),
        ]
        s = self._apply_decided(s, actions)
        if s.preference is not None and s.slot not in s.decided:
            # retoma a instância interrompida pelo crash
            s = s.model_copy(update={"active": True})
            s = self._start_round(s, s.round, actions)
        return s, actions

    # -----------------------------------------------------
    # despacho
    # -----------------------------------------------------
    def handle(self, s: CTState, ev) -> StepResult:
        actions: List[Action] = []
        if isinstance(ev, TimerEvent):
            if ev.label == FD_TICK:
                s = self._on_fd_tick(s, ev.now_us, actions)
            elif ev.label == RETRY:
                s = self._on_retry(s, actions)
            else:
                return s, []
        elif isinstance(ev, ClientRequestEvent):
            s = self._on_client_request(s, ev.client, ev.command, actions)
        else:
            assert isinstance(ev, MessageEvent)
            s = self._heard(s, ev.src, ev.now_us)
            s = self._dispatch(s, ev.src, ev.payload, actions)
        s = self._check_progress(s, actions)
        return s, actions

    def _dispatch(self, s: CTState, src: int, m, actions: List[Action]) -> CTState:
        if isinstance(m, Alive):
            if m.decided_upto > s.decided_upto:
                actions.append(Send(dst=src, payload=DecisionQuery(slot=s.decided_upto + 1)))
            return s
        if isinstance(m, Decide):
            s = self._decide(s, m.slot, m.value, actions)
            if m.slot > s.slot and src != s.node_id:
                actions.append(Send(dst=src, payload=DecisionQuery(slot=s.slot)))
            return s
        if isinstance(m, DecisionQuery):
            if m.slot in s.decided:
                actions.append(Send(dst=src, payload=Decide(slot=m.slot, value=s.decided[m.slot])))
            return s

        # mensagens de round: roteia pela instância
        if m.slot in s.decided:
            actions.append(Send(dst=src, payload=Decide(slot=m.slot, value=s.decided[m.slot])))
            return s
        if m.slot > s.slot:
            actions.append(Send(dst=src, payload=DecisionQuery(slot=s.slot)))
            return s
        if m.slot < s.slot:
            return s
        if not s.active:
            value = getattr(m, "value", None) or (s.pending[0] if s.pending else None)
            if value is None:
                return s
            s = self._activate(s, value, m.round, actions)

        if isinstance(m, Preference):
            return self._on_preference(s, src, m, actions)
        if isinstance(m, CoordValue):
            return self._on_coord_value(s, src, m, actions)
        if isinstance(m, (Ack, Nack)):
            return self._on_response(s, src, m.round, isinstance(m, Ack), actions)
        if isinstance(m, RoundSync):
            if m.round > s.round:
                s = self._start_round(s, m.round, actions)
            return s
        return s

    def _send(self, s: CTState, dst: int, msg, actions: List[Action]) -> CTState:
        if dst == s.node_id:
            return self._dispatch(s, dst, msg, actions)
        actions.append(Send(dst=dst, payload=msg))
        return s

    # -----------------------------------------------------
    # instância e rounds
    # -----------------------------------------------------
    def _activate(self, s: CTState, value: QueueCommand, round_: int, actions: List[Action]) -> CTState:
        s = s.model_copy(update={
            "active": True,
            "round": round_,
            "preference": value,
            "timestamp": 0,
            "adopted": False,
            "answers": {},
        })
        return self._start_round(s, round_, actions)

    def _start_round(self, s: CTState, round_: int, actions: List[Action]) -> CTState:
        """Passo 1: envia (r, preferência, timestamp) ao coordenador do round."""
        s = s.model_copy(update={
            "round": round_,
            "waiting_coord": True,
            "collected": {},
            "coord_value": None,
            "responses": {},
        })
        actions.append(SetTimer(label=RETRY, delay_ms=self.params.retry_ms))
        return self._send(s, coordinator_of(round_, s.n), self._preference_msg(s), actions)

    def _preference_msg(self, s: CTState) -> Preference:
        return Preference(slot=s.slot, round=s.round, value=s.preference, timestamp=s.timestamp, adopted=s.adopted)

    def _on_preference(self, s: CTState, src: int, m: Preference, actions: List[Action]) -> CTState:
        if m.round < s.round:
            if src != s.node_id:
                actions.append(Send(dst=src, payload=RoundSync(slot=s.slot, round=s.round)))
            return s
        if m.round > s.round:
            s = self._start_round(s, m.round, actions)
        if coordinator_of(s.round, s.n) != s.node_id:
            return s
        if s.coord_value is not None:
            # o remetente perdeu o passo 3
            if src not in s.responses:
                s = self._send(s, src, CoordValue(slot=s.slot, round=s.round, value=s.coord_value), actions)
            return s

        entry = CollectedPreference(node=src, value=m.value, timestamp=m.timestamp, adopted=m.adopted)
        s = s.model_copy(update={"collected": {**s.collected, src: entry}})
        if len(s.collected) < majority(s.n):
            return s
        return self._coordinate(s, actions)

    def _coordinate(self, s: CTState, actions: List[Action]) -> CTState:
        """Passos 2 e 3."""
        best = coordinator_collect(s.collected.values())
        actions.append(Note(event="collect", data={
            "slot": s.slot,
            "round": s.round,
            "value": best.value.id,
            "entries": [[c.node, c.timestamp, c.adopted, c.value.id] for c in sorted(s.collected.values(), key=lambda c: c.node)],
        }))
        s = s.model_copy(update={"coord_value": best.value})
        cv = CoordValue(slot=s.slot, round=s.round, value=best.value)
        actions.append(Broadcast(payload=cv))
        return self._on_coord_value(s, s.node_id, cv, actions)

    def _on_coord_value(self, s: CTState, src: int, m: CoordValue, actions: List[Action]) -> CTState:
        """Passo 4 (caso do valor recebido)."""
        if m.round < s.round:
            return self._resend_answer(s, src, m.round, actions)
        if m.round > s.round:
            s = self._start_round(s, m.round, actions)
        if not s.waiting_coord:
            return self._resend_answer(s, src, m.round, actions)
        s = s.model_copy(update={
            "preference": m.value,
            "timestamp": m.round,
            "adopted": True,
            "waiting_coord": False,
            "answers": {**s.answers, m.round: True},
        })
        return self._send(s, src, Ack(slot=s.slot, round=m.round), actions)

    def _resend_answer(self, s: CTState, src: int, round_: int, actions: List[Action]) -> CTState:
        answer = s.answers.get(round_)
        if answer is None or src == s.node_id:
            return s
        msg = Ack(slot=s.slot, round=round_) if answer else Nack(slot=s.slot, round=round_)
        actions.append(Send(dst=src, payload=msg))
        return s

    def _on_response(self, s: CTState, src: int, round_: int, ack: bool, actions: List[Action]) -> CTState:
        if round_ != s.round or coordinator_of(round_, s.n) != s.node_id or s.coord_value is None:
            return s
        s = s.model_copy(update={"responses": {**s.responses, src: ack}})
        return self.coordinator_decide(s, actions)

    def coordinator_decide(self, s: CTState, actions: List[Action]) -> CTState:
        """Passo 5: maioria de acks decide; maioria de respostas sem acks suficientes avança."""
        quorum = majority(s.n)
        if len(s.responses) < quorum:
            return s
        acks = sum(1 for v in s.responses.values() if v)
        if acks >= quorum:
            actions.append(Note(event="locked", data={"slot": s.slot, "round": s.round, "value": s.coord_value.id}))
            return self._decide(s, s.slot, s.coord_value, actions)
        return self._start_round(s, s.round + 1, actions)

    def _decide(self, s: CTState, slot: int, value: QueueCommand, actions: List[Action]) -> CTState:
        """Passo 6: primeira recepção retransmite, decide e encerra a instância."""
        if slot in s.decided:
            return s
        actions.append(Broadcast(payload=Decide(slot=slot, value=value)))
        s = s.model_copy(update={
            "decided": {**s.decided, slot: value},
            "pending": tuple(c for c in s.pending if c.id != value.id),
        })
        s = self._apply_decided(s, actions)
        if slot != s.slot:
            return s

        nxt = s.slot
        while nxt in s.decided:
            nxt += 1
        s = s.model_copy(update={
            "slot": nxt,
            "active": False,
            "round": 0,
            "preference": None,
            "timestamp": 0,
            "adopted": False,
            "waiting_coord": False,
            "answers": {},
            "collected": {},
            "coord_value": None,
            "responses": {},
        })
        if s.pending:
            s = self._activate(s, s.pending[0], 0, actions)
        return s

    def _apply_decided(self, s: CTState, actions: List[Action]) -> CTState:
        upto = s.decided_upto
        if upto <= s.applied_upto:
            return s
        clients = dict(s.clients)
        for slot in range(s.applied_upto + 1, upto + 1):
            cmd = s.decided[slot]
            actions.append(Apply(index=slot, command=cmd, term=0))
            if cmd.id in clients:
                actions.append(Respond(client=clients.pop(cmd.id), command_id=cmd.id, result={"status": "committed"}))
        return s.model_copy(update={"applied_upto": upto, "clients": clients})

    # -----------------------------------------------------
    # detector de falhas e progresso por suspeita
    # -----------------------------------------------------
    def _heard(self, s: CTState, src: int, now_us: int) -> CTState:
        fd = s.fd
        update: Dict = {"last_heard": {**fd.last_heard, src: now_us}}
        if src in fd.suspected:
            # suspeita falsa: dobra o limite (teto 16x)
            update["suspected"] = fd.suspected - {src}
            update["suspect_after_us"] = min(fd.suspect_after_us * 2, fd.initial_us * FD_MAX_FACTOR)
        return s.model_copy(update={"fd": fd.model_copy(update=update)})

    def _on_fd_tick(self, s: CTState, now_us: int, actions: List[Action]) -> CTState:
        fd = s.fd
        suspected = frozenset(
            p for p in s.peers()
            if now_us - fd.last_heard.get(p, 0) > fd.suspect_after_us
        )
        if suspected != fd.suspected:
            s = s.model_copy(update={"fd": fd.model_copy(update={"suspected": suspected})})
        actions.append(Broadcast(payload=Alive(decided_upto=s.decided_upto)))
        actions.append(SetTimer(label=FD_TICK, delay_ms=self.params.fd_heartbeat_ms))
        return s

    def _check_progress(self, s: CTState, actions: List[Action]) -> CTState:
        """Passo 4 (caso da suspeita): nack e próximo round."""
        for _ in range(s.n):
            if not s.active or s.slot in s.decided:
                return s
            coord = coordinator_of(s.round, s.n)
            if coord == s.node_id or not s.fd.is_suspected(coord):
                return s
            if s.waiting_coord:
                actions.append(Send(dst=coord, payload=Nack(slot=s.slot, round=s.round)))
                s = s.model_copy(update={"answers": {**s.answers, s.round: False}, "waiting_coord": False})
            s = self._start_round(s, s.round + 1, actions)
        return s

    def _on_retry(self, s: CTState, actions: List[Action]) -> CTState:
        if not s.active:
            return s
        coord = coordinator_of(s.round, s.n)
        if coord == s.node_id:
            if s.coord_value is not None:
                cv = CoordValue(slot=s.slot, round=s.round, value=s.coord_value)
                actions += [Send(dst=p, payload=cv) for p in s.peers() if p not in s.responses]
            else:
                actions.append(Broadcast(payload=RoundSync(slot=s.slot, round=s.round)))
        elif s.waiting_coord:
            actions.append(Send(dst=coord, payload=self._preference_msg(s)))
        actions.append(SetTimer(label=RETRY, delay_ms=self.params.retry_ms))
        return s

    # -----------------------------------------------------
    # clientes
    # -----------------------------------------------------
    def _on_client_request(self, s: CTState, client: int, cmd: QueueCommand, actions: List[Action]) -> CTState:
        if any(c.id == cmd.id for slot, c in s.decided.items() if slot <= s.applied_upto):
            # retry de comando já aplicado
            actions.append(Respond(client=client, command_id=cmd.id, result={"status": "committed"}))
            return s
        s = s.model_copy(update={"clients": {**s.clients, cmd.id: client}})
        if any(c.id == cmd.id for c in s.pending):
            return s
        s = s.model_copy(update={"pending": s.pending + (cmd,)})
        if not s.active:
            s = self._activate(s, cmd, 0, actions)
        return s

    # -----------------------------------------------------
    # consultas
    # -----------------------------------------------------
    def role(self, s: CTState) -> Role:
        if coordinator_of(s.round, s.n) == s.node_id:
            return Role.COORDINATOR
        return Role.PARTICIPANT

    def is_leader(self, s: CTState) -> bool:
        return s.active and self.role(s) == Role.COORDINATOR

    def epoch(self, s: CTState):
        return s.round

    def summary(self, s: CTState) -> Dict:
        return {"slot": s.slot, "round": s.round, "decided": s.decided_summary()}

    def backlog(self, s: CTState) -> int:
        # o primeiro da fila já é a proposta da instância ativa
        return max(len(s.pending) - 1, 0) if s.active else len(s.pending)
