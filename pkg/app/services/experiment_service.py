# app/services/experiment_service.py
"""
Orquestração: execução única, artefatos em disco, comparação entre
protocolos, matriz de seeds em paralelo e replay de traces.
"""
import json
import logging
import os
import random
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

from app.core.config import settings
from app.core.errors import CheckViolationError, ComparisonMismatchError, ConfigError, LivelockError
from app.protocols.base import get_protocol
from app.schemas.bench import ComparisonReport, WorkloadSpec, parse_ramp
from app.schemas.consensus import (
    Apply, ClientRequestEvent, MessageEvent, Persist, ProtocolParams, TimerEvent,
)
from app.schemas.experiment import ExperimentConfig, NetworkConfig, ReplayResult, RunResult
from app.schemas.queue import QueueCommand
from app.schemas.sim import CrashSpec, FaultPlan, LEADER_TARGET, TraceEvent
from app.services import bench_service, checker_service, queue_service
from app.sim import rng as streams
from app.sim.trace import is_end_marker, write_trace
from app.sim.world import BOOT_LABEL

log = logging.getLogger(__name__)

TRACE_FILE = "trace.ndjson"
METRICS_FILE = "metrics.csv"
SUMMARY_FILE = "summary.json"
VIOLATIONS_FILE = "violations.ndjson"
REPORT_FILE = "report.txt"
COMPARISON_FILE = "comparison.csv"


# ---------------------------------------------------------
# Execução única
# ---------------------------------------------------------
def run_experiment(config: ExperimentConfig) -> RunResult:
    protocol = get_protocol(config.protocol, config.params)
    world = bench_service.drive(protocol, config.sim_config(), config.workload, config.faults)
    samples = bench_service.sample(world.events, config.effective_bucket_ms(), config.nodes)
    summary = bench_service.summarize(config.protocol, config.nodes, config.seed, world, samples)
    check = checker_service.check_trace(world.events) if config.check else None
    return RunResult(config=config, summary=summary, samples=samples, check=check, trace=world.events)


def write_artifacts(result: RunResult, out_dir: Union[str, Path]) -> Dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "trace": write_trace(out / TRACE_FILE, result.trace),
        "metrics": bench_service.write_text(
            out / METRICS_FILE, bench_service.dumps_metrics_csv(result.samples, result.config.nodes),
        ),
        "summary": bench_service.write_text(out / SUMMARY_FILE, result.summary.model_dump_json(indent=2) + "\n"),
    }
    if result.check is not None:
        files["violations"] = bench_service.write_text(
            out / VIOLATIONS_FILE, checker_service.dumps_violations(result.check.violations),
        )
    log.info("artefatos gravados em %s", out)
    return files


def default_out_dir(config: ExperimentConfig) -> Path:
    return Path(config.out_dir or Path(settings.OUTPUT_DIR) / f"{config.protocol}-n{config.nodes}-s{config.seed}")


def execute(config: ExperimentConfig) -> Tuple[RunResult, Dict[str, Path]]:
    """Executa, grava artefatos e só então sinaliza violação ou livelock."""
    result = run_experiment(config)
    files = write_artifacts(result, default_out_dir(config))
    if result.check is not None and result.check.violations:
        raise CheckViolationError(f"{len(result.check.violations)} violações", result.check.violations)
    if result.summary.livelock:
        raise LivelockError(
            f"tempo virtual esgotado com {result.summary.ops_incomplete} operações pendentes",
            pending=result.summary.ops_incomplete,
        )
    return result, files


# ---------------------------------------------------------
# Comparação
# ---------------------------------------------------------
def ensure_comparable(configs: Sequence[ExperimentConfig]) -> None:
    if len(configs) < 2:
        raise ComparisonMismatchError("comparação exige pelo menos duas configurações")
    base = configs[0].comparable_key()
    for other in configs[1:]:
        key = other.comparable_key()
        if key != base:
            diff = sorted(k for k in base if base[k] != key.get(k))
            raise ComparisonMismatchError(f"configurações diferem além do protocolo: {', '.join(diff)}")


def compare(configs: Sequence[ExperimentConfig]) -> Tuple[List[RunResult], ComparisonReport]:
    ensure_comparable(configs)
    results = [run_experiment(c) for c in configs]
    return results, bench_service.compare(results)


def write_comparison(report: ComparisonReport, out_dir: Union[str, Path]) -> Dict[str, Path]:
    out = Path(out_dir)
    return {
        "report": bench_service.write_text(out / REPORT_FILE, bench_service.report_text(report)),
        "comparison": bench_service.write_text(out / COMPARISON_FILE, bench_service.dumps_comparison_csv(report)),
    }


# ---------------------------------------------------------
# Matriz / fuzz
# ---------------------------------------------------------
def random_fault_plan(seed: int, nodes: int, horizon_ms: float = 2000.0) -> FaultPlan:
    """Até f < n/2 nós em crash ao mesmo tempo, todos com restart."""
    rng: random.Random = streams.RngStreams(seed).stream(streams.FAULTS)
    f = (nodes - 1) // 2
    count = rng.randint(0, f)
    victims = rng.sample(range(1, nodes + 1), count)
    crashes = []
    for node in victims:
        crash_at = round(rng.uniform(100, horizon_ms), 3)
        restart_at = round(crash_at + rng.uniform(200, 2000), 3)
        crashes.append(CrashSpec(node=node, crash_at_ms=crash_at, restart_at_ms=restart_at))
    crashes.sort(key=lambda c: c.crash_at_ms)
    return FaultPlan(crashes=crashes)


def fuzz_config(protocol: str, seed: int, nodes: int = 4, ops: int = 500, drop: float = 0.01) -> ExperimentConfig:
    return ExperimentConfig(
        protocol=protocol,
        nodes=nodes,
        seed=seed,
        workload=WorkloadSpec(op_count=ops, client_concurrency=3, payload_bytes=100, mix=0.8, pop_fraction=0.3),
        network=NetworkConfig(drop_probability=drop),
        faults=random_fault_plan(seed, nodes),
        check=True,
    )


def leader_crash_config(protocol: str, seed: int, nodes: int = 4, ops: int = 250) -> ExperimentConfig:
    """Carga em rampa com o líder derrubado no meio da subida."""
    return ExperimentConfig(
        protocol=protocol,
        nodes=nodes,
        seed=seed,
        workload=WorkloadSpec(
            op_count=ops, client_concurrency=5, payload_bytes=1000, mix=0.9,
            ramp=parse_ramp("0:1,250:3,500:5"),
        ),
        faults=FaultPlan(crashes=[CrashSpec(node=LEADER_TARGET, crash_at_ms=800, restart_at_ms=2000)]),
    )


def collision_config(config: ExperimentConfig, jobs: int = 20) -> ExperimentConfig:
    """Troca a carga pelo cenário roteirizado de dois workers disputando a fila."""
    if config.nodes < 2:
        raise ConfigError("cenário de colisão exige pelo menos 2 nós")
    data = config.model_dump()
    data["workload"] = queue_service.collision_scenario(jobs=jobs).model_dump()
    return ExperimentConfig.model_validate(data)


def _run_for_matrix(config: ExperimentConfig, keep_trace: bool) -> RunResult:
    result = run_experiment(config)
    # o trace só volta do worker quando pedido ou quando há violação para inspecionar
    if keep_trace or (result.check is not None and result.check.violations):
        return result
    return result.model_copy(update={"trace": []})


def matrix(
    configs: Sequence[ExperimentConfig], workers: Optional[int] = None, keep_trace: bool = True,
) -> List[RunResult]:
    """Um World por worker; o coletor (chamador) é o único a gravar arquivos."""
    workers = workers or settings.MATRIX_WORKERS or os.cpu_count() or 1
    if workers <= 1 or len(configs) <= 1:
        return [_run_for_matrix(c, keep_trace) for c in configs]
    chunksize = max(1, len(configs) // (workers * 4))
    log.info("matriz: %d execuções em %d workers (lotes de %d)", len(configs), workers, chunksize)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(
            _run_for_matrix, configs, [keep_trace] * len(configs), chunksize=chunksize,
        ))


# ---------------------------------------------------------
# Replay
# ---------------------------------------------------------
def _normalize(value: Any) -> Any:
    return json.loads(json.dumps(value, default=str))


def replay(events: Sequence[TraceEvent]) -> ReplayResult:
    """
    Re-executa as funções step com os eventos gravados e confere a sequência
    de applies por nó e os estados finais (notas final_log).
    """
    if not events:
        return ReplayResult(ok=True)

    boot = checker_service.boot_info(events)
    check = checker_service.check_trace(events)
    if not boot:
        return ReplayResult(ok=False, events=len(events), mismatches=["trace sem registro de boot"], check=check)

    n = boot["n"]
    protocol = get_protocol(boot["protocol"], ProtocolParams.model_validate(boot.get("params", {})))
    body = [ev for ev in events if not is_end_marker(ev)]
    boots = [ev for ev in body if ev.kind == "timer" and ev.detail.get("label") == BOOT_LABEL]
    rest = [ev for ev in body if not (ev.kind == "timer" and ev.detail.get("label") == BOOT_LABEL)]

    states: Dict[int, Any] = {}
    durable: Dict[int, Dict[str, Any]] = {i: {} for i in range(1, n + 1)}
    watermark: Dict[int, int] = {i: 0 for i in range(1, n + 1)}
    replayed: Dict[int, List[Tuple[int, str]]] = {i: [] for i in range(1, n + 1)}

    def absorb(node: int, actions) -> None:
        for a in actions:
            if isinstance(a, Persist):
                durable[node].update(a.delta)
            elif isinstance(a, Apply) and a.index > watermark[node]:
                watermark[node] = a.index
                replayed[node].append((a.index, a.command.id))

    if rest:
        for node in range(1, n + 1):
            states[node], actions = protocol.start(protocol.init_state(node, n), 0)
            absorb(node, actions)

    for ev in rest:
        node, d = ev.node, ev.detail
        if ev.kind == "crash":
            states.pop(node, None)
            continue
        if ev.kind == "restart":
            states[node], actions = protocol.start(protocol.restore(node, n, durable[node]), ev.time_us)
            absorb(node, actions)
            continue
        if ev.kind == "deliver":
            event = MessageEvent(src=d["src"], payload=d["payload"], now_us=ev.time_us)
        elif ev.kind == "timer":
            event = TimerEvent(label=d["label"], now_us=ev.time_us)
        elif ev.kind == "client_req":
            event = ClientRequestEvent(client=d["client"], command=QueueCommand.model_validate(d["command"]), now_us=ev.time_us)
        else:
            continue
        if node not in states:
            continue
        states[node], actions = protocol.step(states[node], event)
        absorb(node, actions)

    mismatches: List[str] = []
    recorded: Dict[int, List[Tuple[int, str]]] = {i: [] for i in range(1, n + 1)}
    for ev in body:
        if ev.kind == "apply":
            recorded.setdefault(ev.node, []).append((ev.detail["index"], ev.detail["value"]))
    for node in range(1, n + 1):
        if recorded.get(node, []) != replayed[node]:
            mismatches.append(
                f"nó {node}: applies gravados {len(recorded.get(node, []))} != reexecutados {len(replayed[node])}"
            )

    final_states: Dict[int, Dict[str, Any]] = {}
    for ev in body:
        if ev.kind == "note" and ev.detail.get("event") == "final_log":
            expected = {k: v for k, v in ev.detail.items() if k != "event"}
            state = states.get(ev.node)
            got = _normalize(protocol.summary(state)) if state is not None else None
            final_states[ev.node] = got or {}
            if got != _normalize(expected):
                mismatches.append(f"nó {ev.node}: estado final diverge do gravado")

    if mismatches:
        log.warning("replay divergiu: %s", "; ".join(mismatches))
    return ReplayResult(
        ok=not mismatches and check.ok,
        protocol=boot["protocol"],
        nodes=n,
        events=len(events),
        mismatches=mismatches,
        final_states=final_states,
        check=check,
    )
