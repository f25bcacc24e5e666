import math

import pytest

from app.core.errors import ComparisonMismatchError
from app.protocols.base import Protocol
from app.schemas.bench import WorkloadSpec
from app.schemas.consensus import ClientRequestEvent, NodeStateBase, Respond
from app.schemas.sim import FixedLatency, SimConfig
from app.services import bench_service, experiment_service
from app.sim.world import WorldResult


class Echo(Protocol):
    """Responde na hora, sem replicar: isola o custo do enlace cliente-nó."""
    name = "echo"

    def init_state(self, node_id, n):
        return NodeStateBase(node_id=node_id, n=n)

    def handle(self, state, event):
        if isinstance(event, ClientRequestEvent):
            return state, [Respond(client=event.client, command_id=event.command.id, result={"status": "committed"})]
        return state, []


def _echo_run(clients: int, ops: int):
    config = SimConfig(
        node_count=3, seed=1, latency_model=FixedLatency(ms=100),
        processing_cost_us=0, processing_cost_per_kb_us=0,
    )
    workload = WorkloadSpec(op_count=ops, client_concurrency=clients, payload_bytes=10, mix=1.0)
    return bench_service.drive(Echo(), config, workload)


def _resp(tb, seq: int, time_ms: float, latency_ms: float, op: str = "enqueue"):
    return tb.add(
        "client_resp", 0, time_ms, client=1, command_id=f"c1-{seq}", op=op, status="committed",
        result={}, latency_us=int(latency_ms * 1000), issued_us=int((time_ms - latency_ms) * 1000),
        served_by=1, attempts=1,
    )


def test_single_op_latency():
    result = _echo_run(clients=1, ops=1)
    samples = bench_service.sample(result.events, 1000, 3)
    assert samples[0].writes == 1
    assert samples[0].write_latency_mean_ms == samples[0].write_latency_max_ms == 200


def test_throughput_matches_round_trip():
    result = _echo_run(clients=5, ops=100)
    samples = bench_service.sample(result.events, 1000, 3)
    assert samples[1].writes + samples[2].writes == 50
    assert samples[1].write_rps == pytest.approx(25)
    assert all(s.reads == 0 and s.read_latency_max_ms == 0 for s in samples)


def test_closed_loop_alternates_requests_and_responses():
    result = _echo_run(clients=1, ops=5)
    kinds = [ev.kind for ev in result.events if ev.kind in ("client_req", "client_resp")]
    assert kinds == ["client_req", "client_resp"] * 5


def test_bucket_means_from_hand_trace(trace_builder):
    tb = trace_builder().boot("raft", n=2)
    for i in range(5):
        _resp(tb, i, 1 + i * 0.5, 2)
    for i in range(5, 10):
        _resp(tb, i, 6 + (i - 5) * 0.5, 7)
    tb.add("deliver", 1, 2, env=1, src=2, dst=1, type="x", bytes=0, cost_us=1000, wait_us=500)
    samples = bench_service.sample(tb.close(), 5, 2)
    assert [s.writes for s in samples] == [5, 5]
    assert samples[0].write_latency_mean_ms == pytest.approx(2)
    assert samples[1].write_latency_mean_ms == pytest.approx(7)
    assert samples[0].node_load[0] == pytest.approx(0.22)
    assert samples[0].node_load[1] == 0


def test_load_counts_commands_held_by_the_protocol(trace_builder):
    tb = trace_builder().boot("paxos", n=2)
    tb.add("client_req", 1, 1, client=1, command={}, attempt=1, issued_us=1000, cost_us=1000, wait_us=0, queued=0)
    tb.add("deliver", 1, 2, env=1, src=2, dst=1, type="x", bytes=0, cost_us=0, wait_us=0, queued=3)
    tb.add("timer", 1, 4, label="x", cost_us=0, wait_us=0, queued=1)
    tb.add("timer", 1, 7, label="x", cost_us=500, wait_us=0, queued=2)
    samples = bench_service.sample(tb.close(), 5, 2)
    # bucket 0: 3 x 1ms + 1 x 2ms + 2 x 1ms retidos; ocupado 1ms de 5
    assert samples[0].node_load[0] == pytest.approx(0.2 * (1 + 7_000 / 5_000))
    # bucket 1: 2 x 2ms retidos; ocupado 0,5ms de 5
    assert samples[1].node_load[0] == pytest.approx(0.1 * (1 + 4_000 / 5_000))
    assert samples[0].node_load[1] == samples[1].node_load[1] == 0


def test_empty_trace_has_no_samples():
    assert bench_service.sample([], 1000, 3) == []


def test_availability_gap():
    assert bench_service.availability_gap_ms([1_000, 5_000], 2_000, 10_000) == 5.0
    assert bench_service.availability_gap_ms([], None, 3_000) == 3.0


def test_availability_gap_ends_at_workload_end():
    writes = [1_000, 5_000, 20_000]
    assert bench_service.availability_gap_ms(writes, 2_000, 22_000) == 15.0
    # horizonte antes da última escrita não acrescenta trecho
    assert bench_service.availability_gap_ms(writes, 2_000, 20_000) == 15.0
    assert bench_service.availability_gap_ms([], 5_000, 5_000) == 0.0


def test_summary_gap_ignores_settle_tail(trace_builder):
    tb = trace_builder().boot("raft", n=2)
    for seq, t in enumerate((1, 5, 20)):
        _resp(tb, seq, t, 1)
    _resp(tb, 3, 22, 1, op="read")
    result = WorldResult(events=tb.close(), livelock=False, pending=0, end_us=1_022_000, first_crash_us=2_000)
    summary = bench_service.summarize("raft", 2, 1, result, [])
    assert summary.availability_gap_ms == 15.0
    assert summary.end_time_ms == 1022.0


def test_livelock_gap_runs_to_end_of_execution(trace_builder):
    tb = trace_builder().boot("paxos", n=2)
    _resp(tb, 0, 1, 1)
    result = WorldResult(events=tb.close(), livelock=True, pending=3, end_us=50_000, first_crash_us=None)
    assert bench_service.summarize("paxos", 2, 1, result, []).availability_gap_ms == 49.0


def test_ratio_edge_cases():
    assert bench_service.ratio(0, 0) == 1.0
    assert math.isinf(bench_service.ratio(1, 0))
    assert bench_service.ratio(3, 2) == 1.5


def test_compare_identical_runs(make_config):
    results, report = experiment_service.compare([make_config("raft"), make_config("raft")])
    assert report.protocols == ["raft", "raft"]
    for row in report.rows:
        assert row.ratios[0] == 1.0
        assert row.ratios[1] == pytest.approx(1.0)
    assert "write_latency_max_ms" in bench_service.report_text(report)


def test_compare_refuses_different_configs(make_config):
    with pytest.raises(ComparisonMismatchError):
        experiment_service.compare([make_config("raft", nodes=3), make_config("paxos", nodes=5)])


def test_compare_needs_two_runs(make_config):
    with pytest.raises(ComparisonMismatchError):
        bench_service.compare([experiment_service.run_experiment(make_config())])


def test_metrics_csv_header(make_config):
    result = experiment_service.run_experiment(make_config(nodes=3))
    text = bench_service.dumps_metrics_csv(result.samples, 3)
    header, *rows = text.splitlines()
    assert header.split(",") == bench_service.metrics_columns(3)
    assert len(rows) == len(result.samples)
    assert "load_n3" in header


def test_leader_changes_from_notes(trace_builder):
    tb = trace_builder().boot("raft", n=3)
    tb.note(1, "leader", 10, term=1)
    tb.note(2, "leader", 30, term=2)
    changes = bench_service.leader_changes(tb.close())
    assert [(c.node, c.epoch) for c in changes] == [(1, 1), (2, 2)]
