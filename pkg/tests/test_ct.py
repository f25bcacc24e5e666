import pytest

from app.protocols.ct import FD_TICK, ChandraTouegProtocol, coordinator_collect, coordinator_of
from app.schemas.consensus import (
    Apply, Broadcast, ClientRequestEvent, MessageEvent, ProtocolParams, Respond, Send, TimerEvent,
)
from app.schemas.ct import CollectedPreference, CoordValue, Decide, FailureDetectorState, Nack, Preference, RoundSync

from tests.conftest import enqueue

proto = ChandraTouegProtocol(ProtocolParams())
A = enqueue(1, 1, 1)
B = enqueue(2, 1, 2)
C = enqueue(3, 1, 3)


def _of(actions, cls):
    return [a for a in actions if isinstance(a, cls)]


def _state(node, n, **update):
    return proto.init_state(node, n).model_copy(update=update)


@pytest.mark.parametrize("n", range(1, 11))
def test_coordinator_formula(n):
    for r in range(100):
        assert coordinator_of(r, n) == (r % n) + 1


def test_coordinator_examples():
    assert coordinator_of(1, 4) == 2
    assert coordinator_of(4, 4) == 1
    with pytest.raises(ValueError):
        coordinator_of(0, 0)


def test_collect_picks_most_recent_timestamp():
    msgs = [
        CollectedPreference(node=1, value=A, timestamp=0),
        CollectedPreference(node=2, value=B, timestamp=2),
        CollectedPreference(node=3, value=C, timestamp=1),
    ]
    assert coordinator_collect(msgs).value == B


def test_collect_ties_go_to_lowest_sender():
    msgs = [
        CollectedPreference(node=3, value=C, timestamp=0),
        CollectedPreference(node=1, value=A, timestamp=0),
        CollectedPreference(node=2, value=B, timestamp=0),
    ]
    assert coordinator_collect(msgs).node == 1
    with pytest.raises(ValueError):
        coordinator_collect([])


def test_fresh_instance_sends_initial_preference_to_coordinator():
    _, actions = proto.step(_state(2, 4), ClientRequestEvent(client=1, command=A))
    assert Send(dst=1, payload=Preference(slot=1, round=0, value=A, timestamp=0)) in actions


def test_single_node_decides_its_own_input():
    s, _ = proto.start(proto.init_state(1, 1), 0)
    s, actions = proto.step(s, ClientRequestEvent(client=7, command=A))
    assert s.decided == {1: A}
    assert [a.command for a in _of(actions, Apply)] == [A]
    assert _of(actions, Respond)[0].client == 7


def test_adopted_value_carries_its_round_as_timestamp():
    s = _state(2, 4, active=True, round=3, waiting_coord=True, preference=A)
    s, actions = proto.step(s, MessageEvent(src=4, payload=CoordValue(slot=1, round=3, value=B)))
    assert (s.preference, s.timestamp, s.adopted) == (B, 3, True)
    assert _of(actions, Send)[0].dst == 4 and _of(actions, Send)[0].payload.type == "ack"

    s, actions = proto.step(s, MessageEvent(src=3, payload=RoundSync(slot=1, round=4)))
    expected = Preference(slot=1, round=4, value=B, timestamp=3, adopted=True)
    assert Send(dst=1, payload=expected) in actions


def test_suspected_coordinator_gets_nack_and_round_advances():
    fd = FailureDetectorState(
        suspect_after_us=200_000, initial_us=200_000,
        last_heard={1: 0, 3: 900_000, 4: 900_000},
    )
    s = _state(2, 4, active=True, round=0, waiting_coord=True, preference=A, fd=fd)
    s, actions = proto.step(s, TimerEvent(label=FD_TICK, now_us=1_000_000))
    assert s.fd.suspected == frozenset({1})
    assert Send(dst=1, payload=Nack(slot=1, round=0)) in actions
    assert s.round == 1
    assert s.answers == {0: False}


def test_heard_from_suspect_doubles_the_timeout():
    fd = FailureDetectorState(suspect_after_us=200_000, initial_us=200_000, suspected=frozenset({3}))
    s, _ = proto.step(_state(1, 4, fd=fd), MessageEvent(src=3, payload=RoundSync(slot=1, round=0), now_us=10))
    assert 3 not in s.fd.suspected
    assert s.fd.suspect_after_us == 400_000


def test_late_coordinator_value_after_nack_is_ignored():
    s = _state(2, 4, active=True, round=1, waiting_coord=True, preference=A, answers={0: False})
    new, actions = proto.step(s, MessageEvent(src=1, payload=CoordValue(slot=1, round=0, value=B)))
    assert (new.preference, new.timestamp) == (A, 0)
    assert _of(actions, Send)[0].payload == Nack(slot=1, round=0)


def test_majority_of_acks_decides():
    s = _state(1, 4, active=True, round=0, coord_value=A, responses={1: True, 2: True, 3: True})
    actions = []
    new = proto.coordinator_decide(s, actions)
    assert new.decided == {1: A}
    assert Decide(slot=1, value=A) in [a.payload for a in _of(actions, Broadcast)]
    assert any(a.kind == "note" and a.event == "locked" for a in actions)


def test_split_responses_move_to_next_round():
    s = _state(1, 4, active=True, round=0, coord_value=A, preference=A, responses={1: True, 2: True, 3: False, 4: False})
    actions = []
    new = proto.coordinator_decide(s, actions)
    assert new.decided == {}
    assert new.round == 1
    assert not [a for a in _of(actions, Broadcast) if isinstance(a.payload, Decide)]
    assert Send(dst=2, payload=Preference(slot=1, round=1, value=A, timestamp=0)) in actions


def test_decide_is_relayed_once():
    s = _state(3, 4, active=True, preference=B)
    s, actions = proto.step(s, MessageEvent(src=1, payload=Decide(slot=1, value=A)))
    assert s.decided == {1: A} and s.slot == 2
    assert Decide(slot=1, value=A) in [a.payload for a in _of(actions, Broadcast)]
    _, again = proto.step(s, MessageEvent(src=2, payload=Decide(slot=1, value=A)))
    assert not _of(again, Broadcast)
