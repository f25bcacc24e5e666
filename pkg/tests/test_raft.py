from app.protocols.raft import ELECTION, HEARTBEAT, RaftProtocol
from app.schemas.consensus import (
    Apply, Broadcast, ClientRequestEvent, LogEntry, MessageEvent, Note, Persist, ProtocolParams, Role, Send,
    SetTimer, TimerEvent,
)
from app.schemas.paxos import Ballot, Prepare
from app.schemas.queue import NOOP
from app.schemas.raft import AppendEntries, AppendReply, RaftState, RequestVote, VoteReply

from tests.conftest import enqueue

proto = RaftProtocol(ProtocolParams())


def _log(*terms):
    return tuple(LogEntry(term=t, index=i, command=enqueue(0, i, i)) for i, t in enumerate(terms, start=1))


def _of(actions, cls):
    return [a for a in actions if isinstance(a, cls)]


def test_election_timeout_starts_candidacy():
    s = RaftState(node_id=1, n=4, current_term=1)
    new, actions = proto.step(s, TimerEvent(label=ELECTION, now_us=1000))
    assert new.role == Role.CANDIDATE
    assert new.current_term == 2
    assert new.voted_for == 1
    assert isinstance(actions[0], Persist)
    assert actions[0].delta == {"current_term": 2, "voted_for": 1}
    (bc,) = _of(actions, Broadcast)
    assert bc.payload == RequestVote(term=2, last_log_index=0, last_log_term=0)


def test_leader_ignores_election_timeout():
    s = RaftState(node_id=1, n=3, current_term=4, role=Role.LEADER)
    assert proto.step(s, TimerEvent(label=ELECTION)) == (s, [])


def test_vote_denied_to_staler_log():
    s = RaftState(node_id=2, n=3, current_term=2, log=_log(1, 2))
    new, actions = proto.step(s, MessageEvent(src=1, payload=RequestVote(term=3, last_log_index=3, last_log_term=1)))
    (reply,) = _of(actions, Send)
    assert reply.payload == VoteReply(term=3, granted=False)
    assert new.voted_for is None


def test_vote_granted_to_equal_log():
    s = RaftState(node_id=2, n=3, current_term=2, log=_log(1, 2))
    new, actions = proto.step(s, MessageEvent(src=1, payload=RequestVote(term=2, last_log_index=2, last_log_term=2)))
    (reply,) = _of(actions, Send)
    assert reply.payload.granted
    assert new.voted_for == 1
    assert any(isinstance(a, SetTimer) and a.label == ELECTION for a in actions)


def test_one_vote_per_term():
    s = RaftState(node_id=3, n=3, current_term=2, voted_for=1)
    _, actions = proto.step(s, MessageEvent(src=2, payload=RequestVote(term=2, last_log_index=0, last_log_term=0)))
    assert not _of(actions, Send)[0].payload.granted


def test_majority_of_four_needs_three_votes():
    s = RaftState(node_id=1, n=4, current_term=2, voted_for=1, role=Role.CANDIDATE, votes_received=frozenset({1}))
    s, _ = proto.step(s, MessageEvent(src=2, payload=VoteReply(term=2, granted=True)))
    assert s.role == Role.CANDIDATE
    s, actions = proto.step(s, MessageEvent(src=3, payload=VoteReply(term=2, granted=True)))
    assert s.role == Role.LEADER
    assert s.log[-1].command == NOOP and s.log[-1].term == 2
    assert any(a.kind == "note" and a.event == "leader" for a in actions)
    assert any(isinstance(a, SetTimer) and a.label == HEARTBEAT for a in actions)
    assert {a.dst for a in _of(actions, Send)} == {2, 3, 4}


def test_heartbeat_with_matching_prev_is_acked():
    s = RaftState(node_id=2, n=3, current_term=3, log=_log(1, 3))
    hb = AppendEntries(term=3, prev_index=2, prev_term=3, leader_commit=2)
    new, actions = proto.step(s, MessageEvent(src=1, payload=hb, now_us=5000))
    assert new.known_leader == 1
    assert new.commit_index == 2
    assert [a.index for a in _of(actions, Apply)] == [1, 2]
    (reply,) = _of(actions, Send)
    assert reply.payload.success and reply.payload.match_index == 2


def test_conflicting_prev_is_rejected_without_touching_the_log():
    s = RaftState(node_id=2, n=3, current_term=2, log=_log(1, 1, 1, 1, 1))
    msg = AppendEntries(term=2, prev_index=5, prev_term=2, entries=())
    new, actions = proto.step(s, MessageEvent(src=1, payload=msg))
    (reply,) = _of(actions, Send)
    assert not reply.payload.success
    assert reply.payload.conflict_index == 1
    assert new.log == s.log


def test_divergent_suffix_is_replaced():
    s = RaftState(node_id=2, n=3, current_term=2, log=_log(1, 1, 1))
    entries = tuple(LogEntry(term=2, index=i, command=enqueue(9, i, 100 + i)) for i in (2, 3))
    msg = AppendEntries(term=2, prev_index=1, prev_term=1, entries=entries)
    new, _ = proto.step(s, MessageEvent(src=1, payload=msg))
    assert [e.term for e in new.log] == [1, 2, 2]
    assert new.log[1:] == entries


def test_stale_leader_gets_current_term_and_steps_down():
    follower = RaftState(node_id=2, n=3, current_term=5)
    _, actions = proto.step(follower, MessageEvent(src=1, payload=AppendEntries(term=3, prev_index=0, prev_term=0)))
    (reply,) = _of(actions, Send)
    assert reply.payload == AppendReply(term=5, success=False)

    leader = RaftState(node_id=1, n=3, current_term=3, role=Role.LEADER)
    new, _ = proto.step(leader, MessageEvent(src=2, payload=reply.payload))
    assert new.role == Role.FOLLOWER and new.current_term == 5


def test_commit_advances_on_majority_in_current_term():
    s = RaftState(
        node_id=1, n=5, current_term=2, role=Role.LEADER, log=_log(2, 2, 2, 2, 2),
        match_index={2: 5, 3: 3, 4: 2, 5: 0}, next_index={2: 6, 3: 4, 4: 3, 5: 1},
    )
    new, actions = proto.step(s, MessageEvent(src=5, payload=AppendReply(term=2, success=True, match_index=5)))
    assert new.commit_index == 5
    assert [a.index for a in _of(actions, Apply)] == [1, 2, 3, 4, 5]


def test_old_term_entries_are_not_committed_by_count():
    s = RaftState(
        node_id=1, n=3, current_term=3, role=Role.LEADER, log=_log(2),
        match_index={2: 0, 3: 0}, next_index={2: 1, 3: 1},
    )
    new, actions = proto.step(s, MessageEvent(src=2, payload=AppendReply(term=3, success=True, match_index=1)))
    assert new.match_index[2] == 1
    assert new.commit_index == 0
    assert not _of(actions, Apply)


def test_no_replies_no_commit():
    s = RaftState(node_id=1, n=3, current_term=1, role=Role.LEADER, log=_log(1), match_index={2: 0, 3: 0})
    new, _ = proto.step(s, TimerEvent(label=HEARTBEAT))
    assert new.commit_index == 0


def test_foreign_message_is_ignored():
    s = RaftState(node_id=1, n=3)
    assert proto.step(s, MessageEvent(src=2, payload=Prepare(ballot=Ballot(1, 2)))) == (s, [])


def test_wire_form_is_decoded():
    s = RaftState(node_id=2, n=3, current_term=1)
    wire = RequestVote(term=2, last_log_index=0, last_log_term=0).model_dump(mode="json")
    new, actions = proto.step(s, MessageEvent(src=1, payload=wire))
    assert new.current_term == 2 and new.voted_for == 1
    assert any(a.kind == "note" for a in proto.step(s, MessageEvent(src=1, payload={"type": "request_vote"}))[1])


def test_step_is_referentially_transparent():
    s = RaftState(node_id=1, n=4, current_term=1)
    ev = TimerEvent(label=ELECTION, now_us=10)
    assert proto.step(s, ev) == proto.step(s, ev)


def test_restore_keeps_only_durable_fields():
    durable = {"current_term": 7, "voted_for": 2, "log": _log(1, 7), "commit_index": 2}
    s = proto.restore(1, 3, durable)
    assert s.current_term == 7 and s.voted_for == 2 and len(s.log) == 2
    assert s.commit_index == 0 and s.role == Role.FOLLOWER


def test_one_append_in_flight_per_peer():
    s = RaftState(
        node_id=1, n=3, current_term=1, role=Role.LEADER, log=_log(1),
        match_index={2: 1, 3: 1}, next_index={2: 2, 3: 2}, in_flight=frozenset({2}),
    )
    new, actions = proto.step(s, ClientRequestEvent(client=0, command=enqueue(0, 2, 2)))
    assert [a.dst for a in _of(actions, Send)] == [3]
    assert new.in_flight == {2, 3}

    # a resposta libera o par, e o que ficou para trás segue na hora
    new, actions = proto.step(new, MessageEvent(src=2, payload=AppendReply(term=1, success=True, match_index=1)))
    (send,) = _of(actions, Send)
    assert send.dst == 2 and [e.index for e in send.payload.entries] == [2]
    assert new.in_flight == {2, 3}


def test_heartbeat_sends_even_with_append_in_flight():
    s = RaftState(
        node_id=1, n=3, current_term=1, role=Role.LEADER, log=_log(1),
        match_index={2: 0, 3: 0}, next_index={2: 1, 3: 1}, in_flight=frozenset({2, 3}),
    )
    _, actions = proto.step(s, TimerEvent(label=HEARTBEAT))
    sends = _of(actions, Send)
    assert sorted(a.dst for a in sends) == [2, 3]
    assert all(len(a.payload.entries) == 1 for a in sends)


def test_log_digest_notes_on_append_and_commit():
    follower = RaftState(node_id=2, n=3, current_term=1)
    msg = AppendEntries(term=1, prev_index=0, prev_term=0, entries=_log(1, 1))
    new, actions = proto.step(follower, MessageEvent(src=1, payload=msg))
    (note,) = _of(actions, Note)
    assert note.event == "log_digest"
    assert note.data == {"index": 2, "term": 1, "digest": new.prefix_digest(2)}

    leader = RaftState(
        node_id=1, n=3, current_term=1, role=Role.LEADER, log=_log(1, 1),
        match_index={2: 0, 3: 0}, next_index={2: 1, 3: 1},
    )
    _, actions = proto.step(leader, MessageEvent(src=2, payload=AppendReply(term=1, success=True, match_index=2)))
    (note,) = [a for a in _of(actions, Note) if a.event == "log_digest"]
    assert note.data["index"] == 2 and note.data["digest"] == new.prefix_digest(2)


def test_prefix_digest_depends_on_terms():
    a = RaftState(node_id=1, n=3, log=_log(1, 1))
    b = RaftState(node_id=2, n=3, log=_log(1, 2))
    assert a.prefix_digest(1) == b.prefix_digest(1)
    assert a.prefix_digest(2) != b.prefix_digest(2)
