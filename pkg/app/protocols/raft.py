# app/protocols/raft.py
"""
Raft: eleição com timeout aleatório, replicação de log com commit por maioria
e leituras confirmadas por uma rodada de heartbeat.
"""
import logging
from typing import Dict, Iterable, List, Optional, Tuple

from app.protocols.base import Protocol, StepResult, register_protocol
from app.schemas.common import majority, ms_to_us
from app.schemas.consensus import (
    Action, Apply, Broadcast, CancelTimer, ClientRequestEvent, LogEntry, MessageEvent,
    Note, Respond, Role, Send, SetTimer, TimerEvent,
)
from app.schemas.queue import NOOP
from app.schemas.raft import (
    AppendEntries, AppendReply, PendingRead, RaftState, RequestVote, VoteReply,
    raft_message_adapter,
)

log = logging.getLogger(__name__)

ELECTION = "election"
HEARTBEAT = "heartbeat"
MAX_ENTRIES_PER_MESSAGE = 64


@register_protocol
class RaftProtocol(Protocol):
    name = "raft"
    durable_fields = ("current_term", "voted_for", "log")
    message_types = (RequestVote, VoteReply, AppendEntries, AppendReply)
    message_adapter = raft_message_adapter

    def init_state(self, node_id: int, n: int) -> RaftState:
        return RaftState(node_id=node_id, n=n)

    def boot(self, s: RaftState, now_us: int) -> StepResult:
        s = s.model_copy(update={"election_deadline_us": self._deadline(now_us)})
        return s, [self._election_timer()]

    # -----------------------------------------------------
    # despacho
    # -----------------------------------------------------
    def handle(self, s: RaftState, ev) -> StepResult:
        if isinstance(ev, TimerEvent):
            if ev.label == ELECTION:
                return self.on_election_timeout(s, ev.now_us)
            if ev.label == HEARTBEAT:
                return self.on_heartbeat_timer(s)
            return s, []
        if isinstance(ev, ClientRequestEvent):
            return self.on_client_request(s, ev)

        assert isinstance(ev, MessageEvent)
        msg = ev.payload
        if isinstance(msg, RequestVote):
            return self.on_vote_request(s, ev.src, msg, ev.now_us)
        if isinstance(msg, VoteReply):
            return self.on_vote_reply(s, ev.src, msg)
        if isinstance(msg, AppendEntries):
            return self.on_append_entries(s, ev.src, msg, ev.now_us)
        if isinstance(msg, AppendReply):
            return self.on_append_reply(s, ev.src, msg)
        return s, []

    # -----------------------------------------------------
    # eleição
    # -----------------------------------------------------
    def on_election_timeout(self, s: RaftState, now_us: int) -> StepResult:
        if s.role == Role.LEADER:
            return s, []
        term = s.current_term + 1
        s = s.model_copy(update={
            "role": Role.CANDIDATE,
            "current_term": term,
            "voted_for": s.node_id,
            "votes_received": frozenset({s.node_id}),
            "known_leader": None,
            "election_deadline_us": self._deadline(now_us),
        })
        actions: List[Action] = [
            self._election_timer(),
            Broadcast(payload=RequestVote(term=term, last_log_index=s.last_log_index, last_log_term=s.last_log_term)),
        ]
        if len(s.votes_received) >= majority(s.n):
            s, more = self.on_majority_votes(s)
            actions += more
        return s, actions

    def on_vote_request(self, s: RaftState, src: int, m: RequestVote, now_us: int) -> StepResult:
        actions: List[Action] = []
        if m.term > s.current_term:
            s = self._step_down(s, m.term, actions)

        up_to_date = (m.last_log_term > s.last_log_term) or (
            m.last_log_term == s.last_log_term and m.last_log_index >= s.last_log_index
        )
        grant = m.term == s.current_term and s.voted_for in (None, src) and up_to_date
        if grant:
            s = s.model_copy(update={"voted_for": src, "election_deadline_us": self._deadline(now_us)})
            actions.append(self._election_timer())
        actions.append(Send(dst=src, payload=VoteReply(term=s.current_term, granted=grant)))
        return s, actions

    def on_vote_reply(self, s: RaftState, src: int, m: VoteReply) -> StepResult:
        actions: List[Action] = []
        if m.term > s.current_term:
            return self._step_down(s, m.term, actions), actions
        if s.role != Role.CANDIDATE or m.term != s.current_term or not m.granted:
            return s, []
        s = s.model_copy(update={"votes_received": s.votes_received | {src}})
        return self.on_majority_votes(s)

    def on_majority_votes(self, s: RaftState) -> StepResult:
        if s.role != Role.CANDIDATE or len(s.votes_received) < majority(s.n):
            return s, []
        nxt = s.last_log_index + 1
        noop = LogEntry(term=s.current_term, index=nxt, command=NOOP)
        s = s.model_copy(update={
            "role": Role.LEADER,
            "known_leader": s.node_id,
            "next_index": {p: nxt for p in s.peers()},
            "match_index": {p: 0 for p in s.peers()},
            "in_flight": frozenset(),
            "log": s.log + (noop,),
            "read_seq": 0,
            "acked_seq": {},
            "pending_reads": (),
            "waiting": {},
        })
        log.debug("nó %s eleito líder no termo %s", s.node_id, s.current_term)
        actions: List[Action] = [
            CancelTimer(label=ELECTION),
            Note(event="leader", data={"term": s.current_term, "log": s.log_summary()}),
            SetTimer(label=HEARTBEAT, delay_ms=self.params.heartbeat_ms),
        ]
        s, sends = self._replicate(s, force=True)
        s, more = self._advance_commit(s)
        return s, actions + sends + more

    # -----------------------------------------------------
    # replicação
    # -----------------------------------------------------
    def on_heartbeat_timer(self, s: RaftState) -> StepResult:
        if s.role != Role.LEADER:
            return s, []
        # também retransmite o que se perdeu: ignora a trava de um envio por par
        s, sends = self._replicate(s, force=True)
        return s, sends + [SetTimer(label=HEARTBEAT, delay_ms=self.params.heartbeat_ms)]

    def on_append_entries(self, s: RaftState, src: int, m: AppendEntries, now_us: int) -> StepResult:
        if m.term < s.current_term:
            reply = AppendReply(term=s.current_term, success=False, read_seq=m.read_seq)
            return s, [Send(dst=src, payload=reply)]

        actions: List[Action] = []
        if m.term > s.current_term or s.role != Role.FOLLOWER:
            s = self._step_down(s, m.term, actions)
        s = s.model_copy(update={"known_leader": src, "election_deadline_us": self._deadline(now_us)})
        actions.append(self._election_timer())

        if m.prev_index > s.last_log_index:
            reply = AppendReply(term=s.current_term, success=False, conflict_index=s.last_log_index + 1, read_seq=m.read_seq)
            return s, actions + [Send(dst=src, payload=reply)]
        if s.term_at(m.prev_index) != m.prev_term:
            conflict_term = s.term_at(m.prev_index)
            ci = m.prev_index
            while ci > 1 and s.term_at(ci - 1) == conflict_term:
                ci -= 1
            reply = AppendReply(term=s.current_term, success=False, conflict_index=ci, read_seq=m.read_seq)
            return s, actions + [Send(dst=src, payload=reply)]

        new_log = self._merge_entries(s.log, m.entries)
        last_new = m.prev_index + len(m.entries)
        commit = s.commit_index
        if m.leader_commit > commit:
            commit = max(commit, min(m.leader_commit, last_new))
        s = s.model_copy(update={"log": new_log, "commit_index": commit})
        if m.entries:
            actions.append(self._digest_note(s, last_new))
        s, applies = self._apply_committed(s)
        actions += applies
        reply = AppendReply(term=s.current_term, success=True, match_index=last_new, read_seq=m.read_seq)
        actions.append(Send(dst=src, payload=reply))
        return s, actions

    @staticmethod
    def _merge_entries(current: Tuple[LogEntry, ...], entries: Tuple[LogEntry, ...]) -> Tuple[LogEntry, ...]:
        log_ = list(current)
        changed = False
        for e in entries:
            if e.index <= len(log_):
                if log_[e.index - 1].term == e.term:
                    continue
                del log_[e.index - 1:]
            log_.append(e)
            changed = True
        return tuple(log_) if changed else current

    def on_append_reply(self, s: RaftState, src: int, m: AppendReply) -> StepResult:
        actions: List[Action] = []
        if m.term > s.current_term:
            return self._step_down(s, m.term, actions), actions
        if s.role != Role.LEADER or m.term != s.current_term:
            return s, []

        acked = dict(s.acked_seq)
        acked[src] = max(acked.get(src, 0), m.read_seq)
        s = s.model_copy(update={"acked_seq": acked, "in_flight": s.in_flight - {src}})

        if m.success:
            match = max(s.match_index.get(src, 0), m.match_index)
            s = s.model_copy(update={
                "match_index": {**s.match_index, src: match},
                "next_index": {**s.next_index, src: match + 1},
            })
            s, more = self._advance_commit(s)
            actions += more
            if s.next_index[src] <= s.last_log_index or acked[src] < s.read_seq:
                s, sends = self._replicate(s, [src])
                actions += sends
        else:
            current_next = s.next_index.get(src, s.last_log_index + 1)
            candidate = m.conflict_index if m.conflict_index > 0 else current_next - 1
            nxt = max(s.match_index.get(src, 0) + 1, min(candidate, current_next - 1), 1)
            s = s.model_copy(update={"next_index": {**s.next_index, src: nxt}})
            s, sends = self._replicate(s, [src])
            actions += sends

        s, more = self._serve_reads(s)
        return s, actions + more

    def _append_for(self, s: RaftState, peer: int) -> AppendEntries:
        nxt = s.next_index.get(peer, s.last_log_index + 1)
        prev = nxt - 1
        return AppendEntries(
            term=s.current_term,
            prev_index=prev,
            prev_term=s.term_at(prev),
            entries=s.log[prev:prev + MAX_ENTRIES_PER_MESSAGE],
            leader_commit=s.commit_index,
            read_seq=s.read_seq,
        )

    def _replicate(self, s: RaftState, peers: Optional[Iterable[int]] = None, force: bool = False) -> StepResult:
        """Um AppendEntries por par sem envio pendente; force ignora a trava."""
        targets = [p for p in (s.peers() if peers is None else peers) if force or p not in s.in_flight]
        if not targets:
            return s, []
        s = s.model_copy(update={"in_flight": s.in_flight | frozenset(targets)})
        return s, [Send(dst=p, payload=self._append_for(s, p)) for p in targets]

    def _advance_commit(self, s: RaftState) -> StepResult:
        if s.role != Role.LEADER:
            return s, []
        quorum = majority(s.n)
        actions: List[Action] = []
        for idx in range(s.last_log_index, s.commit_index, -1):
            if s.term_at(idx) != s.current_term:
                # termos não decrescem no log: nada abaixo é do termo corrente
                break
            replicas = 1 + sum(1 for p in s.peers() if s.match_index.get(p, 0) >= idx)
            if replicas >= quorum:
                s = s.model_copy(update={"commit_index": idx})
                actions.append(self._digest_note(s, idx))
                break
        s, applies = self._apply_committed(s)
        s, more = self._serve_reads(s)
        return s, actions + applies + more

    @staticmethod
    def _digest_note(s: RaftState, index: int) -> Note:
        return Note(event="log_digest", data={"index": index, "term": s.term_at(index), "digest": s.prefix_digest(index)})

    def _apply_committed(self, s: RaftState) -> StepResult:
        if s.last_applied >= s.commit_index:
            return s, []
        actions: List[Action] = []
        waiting = dict(s.waiting)
        for idx in range(s.last_applied + 1, s.commit_index + 1):
            entry = s.log[idx - 1]
            actions.append(Apply(index=idx, command=entry.command, term=entry.term))
            if idx in waiting:
                client, command_id = waiting.pop(idx)
                actions.append(Respond(client=client, command_id=command_id, result={"status": "committed"}))
        s = s.model_copy(update={"last_applied": s.commit_index, "waiting": waiting})
        return s, actions

    # -----------------------------------------------------
    # clientes
    # -----------------------------------------------------
    def on_client_request(self, s: RaftState, ev: ClientRequestEvent) -> StepResult:
        cmd = ev.command
        if s.role != Role.LEADER:
            return s, [Respond(client=ev.client, command_id=cmd.id, result={"status": "redirect", "leader": s.known_leader})]

        if cmd.op == "read":
            seq = s.read_seq + 1
            pending = PendingRead(client=ev.client, command_id=cmd.id, read_index=s.commit_index, read_seq=seq)
            s = s.model_copy(update={"read_seq": seq, "pending_reads": s.pending_reads + (pending,)})
            s, actions = self._replicate(s)
            s, more = self._serve_reads(s)
            return s, actions + more

        entry = LogEntry(term=s.current_term, index=s.last_log_index + 1, command=cmd)
        s = s.model_copy(update={
            "log": s.log + (entry,),
            "waiting": {**s.waiting, entry.index: (ev.client, cmd.id)},
        })
        s, actions = self._replicate(s)
        s, more = self._advance_commit(s)
        return s, actions + more

    def _serve_reads(self, s: RaftState) -> StepResult:
        if s.role != Role.LEADER or not s.pending_reads:
            return s, []
        # só depois de o líder ter algo do próprio termo commitado
        if s.term_at(s.commit_index) != s.current_term:
            return s, []
        quorum = majority(s.n)
        ready: List[PendingRead] = []
        rest: List[PendingRead] = []
        for pr in s.pending_reads:
            confirmations = 1 + sum(1 for p in s.peers() if s.acked_seq.get(p, 0) >= pr.read_seq)
            if confirmations >= quorum and s.last_applied >= pr.read_index:
                ready.append(pr)
            else:
                rest.append(pr)
        if not ready:
            return s, []
        s = s.model_copy(update={"pending_reads": tuple(rest)})
        return s, [Respond(client=pr.client, command_id=pr.command_id, result={"status": "read"}) for pr in ready]

    # -----------------------------------------------------
    # auxiliares
    # -----------------------------------------------------
    def _step_down(self, s: RaftState, term: int, actions: List[Action]) -> RaftState:
        if s.role == Role.LEADER:
            hint = None
            for client, command_id in s.waiting.values():
                actions.append(Respond(client=client, command_id=command_id, result={"status": "redirect", "leader": hint}))
            for pr in s.pending_reads:
                actions.append(Respond(client=pr.client, command_id=pr.command_id, result={"status": "redirect", "leader": hint}))
            actions.append(CancelTimer(label=HEARTBEAT))
            actions.append(self._election_timer())
        newer = term > s.current_term
        update: Dict = {
            "role": Role.FOLLOWER,
            "votes_received": frozenset(),
            "next_index": {},
            "match_index": {},
            "in_flight": frozenset(),
            "waiting": {},
            "pending_reads": (),
        }
        if newer:
            update.update({"current_term": term, "voted_for": None, "known_leader": None})
        return s.model_copy(update=update)

    def _election_timer(self) -> SetTimer:
        p = self.params
        return SetTimer(
            label=ELECTION,
            delay_ms=p.election_timeout_min_ms,
            jitter_ms=p.election_timeout_max_ms - p.election_timeout_min_ms,
        )

    def _deadline(self, now_us: int) -> int:
        # limite inferior; o jitter sorteado pelo harness só o adia
        return now_us + ms_to_us(self.params.election_timeout_min_ms)

    # -----------------------------------------------------
    # consultas
    # -----------------------------------------------------
    def is_leader(self, s: RaftState) -> bool:
        return s.role == Role.LEADER

    def epoch(self, s: RaftState):
        return s.current_term

    def summary(self, s: RaftState) -> Dict:
        return {
            "role": s.role.value,
            "term": s.current_term,
            "commit_index": s.commit_index,
            "log": s.log_summary(),
        }
