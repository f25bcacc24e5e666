# app/protocols/paxos.py
"""
Multi-Paxos com líder fraco: a fase 1 (prepare/promise) é amortizada entre
slots, a fase 2 (accept/accepted) roda um slot por vez (janela 1) e o valor
escolhido é difundido com commit. Qualquer nó pode virar líder; o novo líder
recupera os valores aceitos pelas promessas e os repropõe.
"""
import logging
from typing import Dict, List, Optional

from app.protocols.base import Protocol, StepResult, register_protocol
from app.schemas.common import majority
from app.schemas.consensus import (
    Action, Apply, Broadcast, CancelTimer, ClientRequestEvent, MessageEvent, Note,
    ProtocolParams, Respond, Role, Send, SetTimer, TimerEvent,
)
from app.schemas.paxos import (
    Accept, AcceptReject, Accepted, AcceptedValue, Ballot, CatchUp, ChosenValue, Commit,
    LeaderHeartbeat, PaxosState, Prepare, Promise, Reject, paxos_message_adapter,
)
from app.schemas.queue import NOOP, QueueCommand

log = logging.getLogger(__name__)

LEADER = "leader"
HEARTBEAT = "heartbeat"
RETRY = "retry"
CATCH_UP_BATCH = 100


@register_protocol
class PaxosProtocol(Protocol):
    name = "paxos"
    durable_fields = ("promised", "accepted", "chosen")
    message_types = (Prepare, Promise, Reject, Accept, Accepted, AcceptReject, Commit, LeaderHeartbeat, CatchUp)
    message_adapter = paxos_message_adapter

    def __init__(self, params: Optional[ProtocolParams] = None, check_promise: Optional[bool] = None):
        super().__init__(params)
        # False = variante quebrada: aceitantes ignoram o ballot prometido
        self.check_promise = self.params.check_promise if check_promise is None else check_promise

    def init_state(self, node_id: int, n: int) -> PaxosState:
        return PaxosState(node_id=node_id, n=n)

    def boot(self, s: PaxosState, now_us: int) -> StepResult:
        s, applies = self._apply_chosen(s)
        return s, [self._leader_timer(s)] + applies

    # -----------------------------------------------------
    # despacho
    # -----------------------------------------------------
    def handle(self, s: PaxosState, ev) -> StepResult:
        if isinstance(ev, TimerEvent):
            if ev.label == LEADER:
                return self.propose_leadership(s)
            if ev.label == HEARTBEAT:
                return self.on_heartbeat_timer(s)
            if ev.label == RETRY:
                return self.on_retry_timer(s)
            return s, []
        if isinstance(ev, ClientRequestEvent):
            return self.on_client_request(s, ev.client, ev.command)

        assert isinstance(ev, MessageEvent)
        m, src = ev.payload, ev.src
        if isinstance(m, Prepare):
            return self.on_proposed(s, src, m)
        if isinstance(m, Promise):
            return self.on_promise(s, src, m)
        if isinstance(m, Reject):
            return self.on_reject(s, m)
        if isinstance(m, Accept):
            return self.on_accept(s, src, m)
        if isinstance(m, Accepted):
            return self.on_majority_ack(s, src, m)
        if isinstance(m, AcceptReject):
            return self.on_accept_reject(s, m)
        if isinstance(m, Commit):
            return self.on_commit(s, src, m)
        if isinstance(m, LeaderHeartbeat):
            return self.on_leader_heartbeat(s, src, m)
        if isinstance(m, CatchUp):
            return self.on_catch_up(s, src, m)
        return s, []

    # -----------------------------------------------------
    # fase 1: liderança
    # -----------------------------------------------------
    def propose_leadership(self, s: PaxosState) -> StepResult:
        if s.role == Role.PROPOSER_LEADER:
            return s, []
        counter = max(s.promised.counter, s.max_seen_counter) + 1
        ballot = Ballot(counter, s.node_id)
        from_slot = s.chosen_upto + 1
        own = self._promise_for(s, ballot, from_slot)
        s = s.model_copy(update={
            "promised": ballot,
            "max_seen_counter": counter,
            "preparing": True,
            "promises": {s.node_id: own},
            "known_leader": None,
            "leader_ballot": None,
        })
        actions: List[Action] = [self._leader_timer(s), Broadcast(payload=Prepare(ballot=ballot, from_slot=from_slot))]
        if len(s.promises) >= majority(s.n):
            s, more = self._become_leader(s)
            actions += more
        return s, actions

    def on_proposed(self, s: PaxosState, src: int, m: Prepare) -> StepResult:
        s = self._saw(s, m.ballot)
        if self.check_promise and m.ballot < s.promised:
            return s, [Send(dst=src, payload=Reject(ballot=m.ballot, promised=s.promised))]

        actions: List[Action] = []
        if s.role == Role.PROPOSER_LEADER and m.ballot != s.leader_ballot:
            s = self._step_down(s, actions, m.ballot.proposer)
        promised = max(s.promised, m.ballot)
        update: Dict = {"promised": promised, "known_leader": m.ballot.proposer}
        if s.preparing and m.ballot > s.promised:
            update.update({"preparing": False, "promises": {}})
        s = s.model_copy(update=update)
        actions.append(Send(dst=src, payload=self._promise_for(s, m.ballot, m.from_slot)))
        actions.append(self._leader_timer(s))
        return s, actions

    def on_promise(self, s: PaxosState, src: int, m: Promise) -> StepResult:
        if not s.preparing or m.ballot != s.promised or m.ballot.proposer != s.node_id:
            return s, []
        s = s.model_copy(update={"promises": {**s.promises, src: m}})
        if len(s.promises) < majority(s.n):
            return s, []
        return self._become_leader(s)

    def on_reject(self, s: PaxosState, m: Reject) -> StepResult:
        s = self._saw(s, m.promised)
        actions: List[Action] = []
        if s.preparing and m.ballot == s.promised and m.ballot.proposer == s.node_id:
            # desiste; o timer de liderança continua armado para nova tentativa
            s = s.model_copy(update={"preparing": False, "promises": {}, "known_leader": m.promised.proposer})
        elif s.role == Role.PROPOSER_LEADER and m.ballot == s.leader_ballot:
            s = self._step_down(s, actions, m.promised.proposer)
        return s, actions

    def _become_leader(self, s: PaxosState) -> StepResult:
        ballot = s.promised
        chosen = s.chosen
        recovered: Dict[int, AcceptedValue] = {}
        for promise in s.promises.values():
            for c in promise.chosen:
                if c.slot not in chosen:
                    chosen = {**chosen, c.slot: c.command}
            for a in promise.accepted:
                best = recovered.get(a.slot)
                if best is None or a.ballot > best.ballot:
                    recovered[a.slot] = a
        recovered = {slot: a for slot, a in recovered.items() if slot not in chosen}

        s = s.model_copy(update={
            "role": Role.PROPOSER_LEADER,
            "leader_ballot": ballot,
            "known_leader": s.node_id,
            "preparing": False,
            "promises": {},
            "chosen": chosen,
            "recovered": recovered,
            "in_flight": None,
            "ack_tally": {},
        })
        s, applies = self._apply_chosen(s)
        s = s.model_copy(update={"next_slot": s.chosen_upto + 1})
        log.debug("nó %s lidera com ballot %s (%d valores recuperados)", s.node_id, ballot, len(recovered))
        actions: List[Action] = [
            CancelTimer(label=LEADER),
            Note(event="leader", data={"ballot": list(ballot), "recovered": sorted(recovered)}),
            SetTimer(label=HEARTBEAT, delay_ms=self.params.heartbeat_ms),
            Broadcast(payload=LeaderHeartbeat(ballot=ballot, chosen_upto=s.chosen_upto)),
        ] + applies
        s, more = self._propose_next(s)
        return s, actions + more

    # -----------------------------------------------------
    # fase 2: valores
    # -----------------------------------------------------
    def _propose_next(self, s: PaxosState) -> StepResult:
        if s.role != Role.PROPOSER_LEADER or s.in_flight is not None:
            return s, []
        slot = max(s.next_slot, s.chosen_upto + 1)
        while slot in s.chosen:
            slot += 1
        top_recovered = max(s.recovered, default=0)
        pending = s.pending
        if slot in s.recovered:
            value = s.recovered[slot].command
        elif slot < top_recovered:
            value = NOOP
        elif pending:
            value = pending[0][1]
            pending = pending[1:]
        else:
            return s.model_copy(update={"next_slot": slot}), []
        return self.phase2_accept(s.model_copy(update={"pending": pending}), slot, value)

    def phase2_accept(self, s: PaxosState, slot: int, value: QueueCommand) -> StepResult:
        """Propõe `value` no slot; valor recuperado de promessas tem precedência."""
        recovered = s.recovered.get(slot)
        if recovered is not None:
            value = recovered.command
        ballot = s.leader_ballot
        proposal = AcceptedValue(slot=slot, ballot=ballot, command=value)
        s = s.model_copy(update={
            "accepted": {**s.accepted, slot: proposal},
            "in_flight": proposal,
            "ack_tally": {**s.ack_tally, slot: frozenset({s.node_id})},
            "next_slot": slot,
            "recovered": {k: v for k, v in s.recovered.items() if k != slot},
        })
        actions: List[Action] = [
            Broadcast(payload=Accept(ballot=ballot, slot=slot, command=value)),
            SetTimer(label=RETRY, delay_ms=self.params.retry_ms),
        ]
        if len(s.ack_tally[slot]) >= majority(s.n):
            s, more = self._choose(s, slot, value)
            actions += more
        return s, actions

    def on_accept(self, s: PaxosState, src: int, m: Accept) -> StepResult:
        s = self._saw(s, m.ballot)
        if self.check_promise and m.ballot < s.promised:
            return s, [Send(dst=src, payload=AcceptReject(ballot=m.ballot, slot=m.slot, promised=s.promised))]

        actions: List[Action] = []
        if s.role == Role.PROPOSER_LEADER and m.ballot != s.leader_ballot:
            s = self._step_down(s, actions, m.ballot.proposer)
        accepted = s.accepted
        current = accepted.get(m.slot)
        if current is None or not self.check_promise or m.ballot >= current.ballot:
            accepted = {**accepted, m.slot: AcceptedValue(slot=m.slot, ballot=m.ballot, command=m.command)}
        s = s.model_copy(update={
            "promised": max(s.promised, m.ballot),
            "accepted": accepted,
            "known_leader": m.ballot.proposer,
        })
        actions.append(Send(dst=src, payload=Accepted(ballot=m.ballot, slot=m.slot)))
        if s.role != Role.PROPOSER_LEADER:
            actions.append(self._leader_timer(s))
        return s, actions

    def on_majority_ack(self, s: PaxosState, src: int, m: Accepted) -> StepResult:
        flight = s.in_flight
        if (
            s.role != Role.PROPOSER_LEADER
            or m.ballot != s.leader_ballot
            or flight is None
            or flight.slot != m.slot
        ):
            return s, []
        tally = s.ack_tally.get(m.slot, frozenset()) | {src}
        s = s.model_copy(update={"ack_tally": {**s.ack_tally, m.slot: tally}})
        if len(tally) < majority(s.n):
            return s, []
        return self._choose(s, m.slot, flight.command)

    def on_accept_reject(self, s: PaxosState, m: AcceptReject) -> StepResult:
        s = self._saw(s, m.promised)
        if s.role != Role.PROPOSER_LEADER or m.ballot != s.leader_ballot:
            return s, []
        actions: List[Action] = []
        return self._step_down(s, actions, m.promised.proposer), actions

    def _choose(self, s: PaxosState, slot: int, value: QueueCommand) -> StepResult:
        tally = dict(s.ack_tally)
        tally.pop(slot, None)
        chosen = s.chosen if slot in s.chosen else {**s.chosen, slot: value}
        s = s.model_copy(update={
            "chosen": chosen,
            "in_flight": None,
            "ack_tally": tally,
            "next_slot": slot + 1,
        })
        actions: List[Action] = [
            CancelTimer(label=RETRY),
            Broadcast(payload=Commit(slot=slot, command=value)),
        ]
        s, applies = self._apply_chosen(s)
        s, more = self._propose_next(s)
        return s, actions + applies + more

    def on_commit(self, s: PaxosState, src: int, m: Commit) -> StepResult:
        actions: List[Action] = []
        if m.slot not in s.chosen:
            s = s.model_copy(update={"chosen": {**s.chosen, m.slot: m.command}})
        if s.in_flight is not None and s.in_flight.slot in s.chosen:
            s = s.model_copy(update={"in_flight": None})
            actions.append(CancelTimer(label=RETRY))
        if s.role != Role.PROPOSER_LEADER and src == s.known_leader:
            actions.append(self._leader_timer(s))
        s, applies = self._apply_chosen(s)
        s, more = self._propose_next(s)
        return s, actions + applies + more

    # -----------------------------------------------------
    # heartbeat, retransmissão e catch-up
    # -----------------------------------------------------
    def on_heartbeat_timer(self, s: PaxosState) -> StepResult:
        if s.role != Role.PROPOSER_LEADER:
            return s, []
        return s, [
            Broadcast(payload=LeaderHeartbeat(ballot=s.leader_ballot, chosen_upto=s.chosen_upto)),
            SetTimer(label=HEARTBEAT, delay_ms=self.params.heartbeat_ms),
        ]

    def on_retry_timer(self, s: PaxosState) -> StepResult:
        flight = s.in_flight
        if s.role != Role.PROPOSER_LEADER or flight is None:
            return s, []
        acked = s.ack_tally.get(flight.slot, frozenset())
        accept = Accept(ballot=flight.ballot, slot=flight.slot, command=flight.command)
        actions: List[Action] = [Send(dst=p, payload=accept) for p in s.peers() if p not in acked]
        actions.append(SetTimer(label=RETRY, delay_ms=self.params.retry_ms))
        return s, actions

    def on_leader_heartbeat(self, s: PaxosState, src: int, m: LeaderHeartbeat) -> StepResult:
        s = self._saw(s, m.ballot)
        if m.ballot < s.promised and s.promised.proposer != src:
            # ignora líderes antigos e avisa para que abdiquem
            return s, [Send(dst=src, payload=Reject(ballot=m.ballot, promised=s.promised))]
        actions: List[Action] = []
        if s.role == Role.PROPOSER_LEADER:
            if m.ballot <= s.leader_ballot:
                return s, []
            s = self._step_down(s, actions, src)
        if s.preparing and m.ballot >= s.promised:
            s = s.model_copy(update={"preparing": False, "promises": {}})
        s = s.model_copy(update={"known_leader": src})
        actions.append(self._leader_timer(s))
        if m.chosen_upto > s.chosen_upto:
            actions.append(Send(dst=src, payload=CatchUp(from_slot=s.chosen_upto + 1)))
        return s, actions

    def on_catch_up(self, s: PaxosState, src: int, m: CatchUp) -> StepResult:
        actions: List[Action] = [
            Send(dst=src, payload=Commit(slot=slot, command=s.chosen[slot]))
            for slot in range(m.from_slot, m.from_slot + CATCH_UP_BATCH)
            if slot in s.chosen
        ]
        return s, actions

    # -----------------------------------------------------
    # clientes
    # -----------------------------------------------------
    def on_client_request(self, s: PaxosState, client: int, cmd: QueueCommand) -> StepResult:
        if s.role != Role.PROPOSER_LEADER:
            hint = s.known_leader if s.known_leader != s.node_id else None
            return s, [Respond(client=client, command_id=cmd.id, result={"status": "redirect", "leader": hint})]
        # leituras também passam pelo log
        known = cmd.id in s.clients
        s = s.model_copy(update={"clients": {**s.clients, cmd.id: client}})
        if not known:
            s = s.model_copy(update={"pending": s.pending + ((client, cmd),)})
        return self._propose_next(s)

    # -----------------------------------------------------
    # auxiliares
    # -----------------------------------------------------
    def _apply_chosen(self, s: PaxosState) -> StepResult:
        upto = s.chosen_upto
        if upto <= s.applied_upto:
            return s, []
        actions: List[Action] = []
        clients = dict(s.clients)
        for slot in range(s.applied_upto + 1, upto + 1):
            cmd = s.chosen[slot]
            actions.append(Apply(index=slot, command=cmd))
            if cmd.id in clients:
                actions.append(Respond(client=clients.pop(cmd.id), command_id=cmd.id, result={"status": "committed"}))
        return s.model_copy(update={"applied_upto": upto, "clients": clients}), actions

    def _promise_for(self, s: PaxosState, ballot: Ballot, from_slot: int) -> Promise:
        return Promise(
            ballot=ballot,
            accepted=tuple(s.accepted[k] for k in sorted(s.accepted) if k >= from_slot and k not in s.chosen),
            chosen=tuple(ChosenValue(slot=k, command=s.chosen[k]) for k in sorted(s.chosen) if k >= from_slot),
        )

    def _step_down(self, s: PaxosState, actions: List[Action], leader: Optional[int] = None) -> PaxosState:
        for command_id, client in s.clients.items():
            actions.append(Respond(client=client, command_id=command_id, result={"status": "redirect", "leader": leader}))
        s = s.model_copy(update={
            "role": Role.ACCEPTOR,
            "leader_ballot": None,
            "known_leader": leader,
            "in_flight": None,
            "ack_tally": {},
            "recovered": {},
            "pending": (),
            "clients": {},
        })
        actions += [CancelTimer(label=HEARTBEAT), CancelTimer(label=RETRY), self._leader_timer(s)]
        return s

    @staticmethod
    def _saw(s: PaxosState, ballot: Ballot) -> PaxosState:
        if ballot.counter > s.max_seen_counter:
            return s.model_copy(update={"max_seen_counter": ballot.counter})
        return s

    @staticmethod
    def turn(s: PaxosState) -> int:
        """Posição do nó na fila de sucessão do último líder conhecido (0 = sucessor)."""
        last = s.known_leader or s.promised.proposer
        return (s.node_id - last - 1) % s.n

    def _leader_timer(self, s: PaxosState) -> SetTimer:
        # sem detector de falhas: a liderança passa por vez, sem sorteio
        p = self.params
        step = p.leader_timeout_max_ms - p.leader_timeout_min_ms
        return SetTimer(label=LEADER, delay_ms=p.leader_timeout_max_ms + self.turn(s) * step)

    # -----------------------------------------------------
    # consultas
    # -----------------------------------------------------
    def is_leader(self, s: PaxosState) -> bool:
        return s.role == Role.PROPOSER_LEADER

    def epoch(self, s: PaxosState):
        return list(s.leader_ballot or s.promised)

    def summary(self, s: PaxosState) -> Dict:
        return {
            "role": s.role.value,
            "promised": list(s.promised),
            "chosen": s.chosen_summary(),
        }

    def backlog(self, s: PaxosState) -> int:
        return len(s.pending)
