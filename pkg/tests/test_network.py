import random

import pytest

from app.schemas.paxos import Accept, Ballot
from app.schemas.queue import Job, QueueCommand
from app.schemas.sim import FaultPlan, PartitionSpec, SimConfig
from app.sim import rng as streams
from app.sim.network import HEADER_BYTES, Network, message_size


def make_network(seed=42, faults=None, **kw):
    config = SimConfig(node_count=3, seed=seed, **kw)
    return Network(config, faults or FaultPlan(), streams.RngStreams(seed))


def test_streams_are_stable_and_independent():
    assert streams.derive_seed(7, "drop") == streams.derive_seed(7, "drop")
    assert streams.derive_seed(7, "drop") != streams.derive_seed(7, "latency")
    assert streams.derive_seed(7, "drop") != streams.derive_seed(8, "drop")
    rngs = streams.RngStreams(7)
    assert rngs.stream("drop") is rngs.stream("drop")


def test_no_loss_delivers_everything():
    net = make_network(drop_probability=0.0)
    outcomes = [net.send(1, 2, "x", 0) for _ in range(200)]
    assert all(o.drop_reason is None and len(o.deliveries) == 1 for o in outcomes)


def test_total_loss_delivers_nothing():
    net = make_network(drop_probability=1.0)
    outcomes = [net.send(1, 2, "x", 0) for _ in range(200)]
    assert sum(len(o.deliveries) for o in outcomes) == 0
    assert {o.drop_reason for o in outcomes} == {"loss"}


def test_half_loss_matches_independent_replay_of_the_drop_stream():
    seed = 42
    net = make_network(seed=seed, drop_probability=0.5)
    delivered = sum(1 for _ in range(1000) if net.send(1, 2, "x", 0).deliveries)

    oracle = random.Random(streams.derive_seed(seed, streams.DROP))
    expected = sum(1 for _ in range(1000) if oracle.random() >= 0.5)
    assert delivered == expected
    assert 400 < delivered < 600


def test_fixed_latency_and_duplication():
    net = make_network(latency_model="fixed:5", duplicate_probability=1.0)
    out = net.send(1, 3, "x", 1000)
    assert [e.deliver_at_us for e in out.deliveries] == [6000, 6000]
    assert [e.duplicate for e in out.deliveries] == [False, True]
    assert out.deliveries[0].id == out.deliveries[1].id == out.env_id


def test_partition_window_is_half_open():
    faults = FaultPlan(partitions=[PartitionSpec(side_a=[1], side_b=[2, 3], start_ms=0, end_ms=10)])
    net = make_network(faults=faults)
    assert net.send(1, 2, "x", 0).drop_reason == "partition"
    assert net.send(3, 1, "x", 9_999).drop_reason == "partition"
    assert net.send(2, 3, "x", 5_000).drop_reason is None
    assert net.send(1, 2, "x", 10_000).drop_reason is None


def test_message_size_counts_carried_payload():
    cmd = QueueCommand(id="c0-1", op="enqueue", job=Job(id=1, payload_bytes=1000))
    msg = Accept(ballot=Ballot(1, 1), slot=1, command=cmd)
    assert message_size(msg) == HEADER_BYTES + len(msg.model_dump_json()) + 1000


@pytest.mark.parametrize("text", ["fixed", "uniform:5", "normal:1:2", ""])
def test_invalid_latency_text(text):
    with pytest.raises(ValueError):
        SimConfig(node_count=1, latency_model=text)
