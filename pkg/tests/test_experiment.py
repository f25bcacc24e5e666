from pathlib import Path

import pytest

from app.core.errors import CorruptTraceError, LivelockError
from app.schemas.sim import CrashSpec, FaultPlan
from app.services import experiment_service
from app.sim.trace import read_trace


@pytest.mark.parametrize("protocol", ["raft", "paxos", "ct"])
def test_replay_of_written_trace(make_config, protocol):
    result, files = experiment_service.execute(make_config(protocol))
    verdict = experiment_service.replay(read_trace(files["trace"]))
    assert verdict.ok, verdict.mismatches
    assert verdict.protocol == protocol and verdict.nodes == 3
    assert verdict.events == len(result.trace)


def test_replay_across_crash_and_restart(make_config):
    faults = FaultPlan(crashes=[CrashSpec(node=0, crash_at_ms=100, restart_at_ms=600)])
    result = experiment_service.run_experiment(make_config("raft", ops=60, faults=faults))
    verdict = experiment_service.replay(result.trace)
    assert verdict.ok, verdict.mismatches


def test_replay_of_empty_trace():
    assert experiment_service.replay([]).ok


def test_replay_detects_tampered_apply(make_config):
    result = experiment_service.run_experiment(make_config("paxos"))
    trace = list(result.trace)
    i = next(i for i, ev in enumerate(trace) if ev.kind == "apply")
    trace[i] = trace[i].model_copy(update={"detail": {**trace[i].detail, "value": "forged"}})
    verdict = experiment_service.replay(trace)
    assert not verdict.ok
    assert verdict.mismatches


def test_truncated_trace_file(make_config, tmp_path):
    _, files = experiment_service.execute(make_config())
    text = Path(files["trace"]).read_text(encoding="utf-8")
    cut = tmp_path / "cut.ndjson"
    cut.write_text(text[: len(text) // 2], encoding="utf-8")
    with pytest.raises(CorruptTraceError):
        read_trace(cut)


def test_livelock_still_writes_artifacts(make_config, output_dir):
    crashes = [CrashSpec(node=i, crash_at_ms=0) for i in (1, 2, 3)]
    config = make_config(faults=FaultPlan(crashes=crashes), max_virtual_time_ms=2000)
    with pytest.raises(LivelockError) as info:
        experiment_service.execute(config)
    assert info.value.pending > 0
    out = experiment_service.default_out_dir(config)
    assert out.parent == output_dir
    assert (out / experiment_service.TRACE_FILE).exists()
    assert (out / experiment_service.SUMMARY_FILE).exists()


@pytest.mark.parametrize("seed", range(20))
def test_random_fault_plan_bounds(seed):
    plan = experiment_service.random_fault_plan(seed, 5)
    assert len(plan.crashes) <= 2
    assert len({c.node for c in plan.crashes}) == len(plan.crashes)
    for c in plan.crashes:
        assert 1 <= c.node <= 5
        assert 100 <= c.crash_at_ms <= 2000
        assert c.restart_at_ms > c.crash_at_ms
    assert plan == experiment_service.random_fault_plan(seed, 5)


def test_leader_crash_config_targets_current_leader():
    config = experiment_service.leader_crash_config("raft", 3)
    assert config.faults.crashes[0].node == 0
    assert [s.concurrency for s in config.workload.ramp] == [1, 3, 5]
    assert [s.at_ms for s in config.workload.ramp] == [0, 250, 500]
    crash = config.faults.crashes[0]
    assert (crash.crash_at_ms, crash.restart_at_ms) == (800, 2000)
    assert config.workload.op_count == 250


def test_matrix_in_processes_matches_sequential():
    configs = [experiment_service.fuzz_config(p, 4, nodes=3, ops=40) for p in ("raft", "paxos")]
    sequential = experiment_service.matrix(configs, workers=1)
    pooled = experiment_service.matrix(configs, workers=2)
    assert [r.summary for r in pooled] == [r.summary for r in sequential]
    assert [r.trace for r in pooled] == [r.trace for r in sequential]


def test_matrix_can_leave_clean_traces_in_the_worker():
    configs = [experiment_service.fuzz_config("raft", s, nodes=3, ops=30) for s in (1, 2)]
    slim = experiment_service.matrix(configs, workers=2, keep_trace=False)
    assert all(r.trace == [] and r.check.ok for r in slim)
    assert [r.summary for r in slim] == [r.summary for r in experiment_service.matrix(configs, workers=1)]


@pytest.mark.slow
@pytest.mark.parametrize("protocol", ["raft", "paxos", "ct"])
def test_fuzz_thousand_seeds(protocol):
    configs = [experiment_service.fuzz_config(protocol, s) for s in range(1000)]
    failures = [
        (r.config.seed, [v.property for v in r.check.violations])
        for r in experiment_service.matrix(configs, keep_trace=False)
        if r.check.violations or r.summary.livelock
    ]
    assert failures == []


DIRECTION_METRICS = ["write_latency_max_ms", "load_variance", "availability_gap_ms"]


def _leader_crash_pairs(seeds):
    configs = [experiment_service.leader_crash_config(p, s) for s in seeds for p in ("raft", "paxos")]
    results = experiment_service.matrix(configs, keep_trace=False)
    return list(zip(results[::2], results[1::2]))


def _holds(pairs, metric):
    return sum(1 for r, p in pairs if getattr(r.summary, metric) <= getattr(p.summary, metric))


def test_leader_crash_direction_smoke():
    pairs = _leader_crash_pairs(range(10))
    for metric in DIRECTION_METRICS:
        assert _holds(pairs, metric) >= 8, metric


@pytest.mark.slow
def test_leader_crash_direction():
    pairs = _leader_crash_pairs(range(100))
    for metric in DIRECTION_METRICS:
        assert _holds(pairs, metric) >= 90, metric
