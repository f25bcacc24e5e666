# app/services/bench_service.py
"""
Carga e métricas: dirige o World, agrega o trace em buckets (latência,
requisições/s, carga por nó, rede) e compara execuções entre protocolos.
"""
import csv
import io
import logging
import math
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numpy as np

from app.core.errors import ComparisonMismatchError
from app.protocols.base import Protocol
from app.schemas.bench import (
    ComparisonReport, ComparisonRow, LeaderChange, MetricsSample, RunSummary, WorkloadSpec,
)
from app.schemas.common import US_PER_MS, ms_to_us, us_to_ms
from app.schemas.sim import FaultPlan, SimConfig, TraceEvent
from app.services import queue_service
from app.sim.world import World, WorldResult

log = logging.getLogger(__name__)

WRITE_OPS = ("enqueue", "pop", "complete")
BASE_COLUMNS = [
    "bucket_start_ms", "writes", "reads",
    "write_latency_mean_ms", "write_latency_max_ms",
    "read_latency_mean_ms", "read_latency_max_ms",
    "write_rps", "read_rps",
]
COMPARED_METRICS = [
    "write_latency_mean_ms", "write_latency_max_ms",
    "read_latency_mean_ms", "read_latency_max_ms",
    "write_rps_mean", "write_rps_cv",
    "load_mean", "load_variance",
    "availability_gap_ms", "net_sent_kb", "messages_sent",
]


def drive(protocol: Protocol, config: SimConfig, workload: WorkloadSpec, faults: Optional[FaultPlan] = None) -> WorldResult:
    log.info(
        "execução: protocolo=%s nós=%s ops=%s clientes=%s seed=%s",
        protocol.name, config.node_count, workload.total_ops, workload.client_concurrency, config.seed,
    )
    result = World(protocol, config, workload, faults).run()
    log.info("fim em %.1fms virtuais (%s eventos)", us_to_ms(result.end_us), len(result.events))
    return result


# ---------------------------------------------------------
# Amostragem em buckets
# ---------------------------------------------------------
def _is_write(op: Optional[str]) -> bool:
    return op in WRITE_OPS


def _spread(acc: np.ndarray, node: int, start_us: int, end_us: int, depth: int, bucket_us: int) -> None:
    """Soma depth x duração em [start_us, end_us), repartida entre os buckets que o intervalo cruza."""
    while start_us < end_us:
        b = start_us // bucket_us
        stop = min(end_us, (b + 1) * bucket_us)
        acc[b, node] += depth * (stop - start_us)
        start_us = stop


def sample(trace: Sequence[TraceEvent], bucket_ms: int, n: int) -> List[MetricsSample]:
    if not trace:
        return []
    bucket_us = ms_to_us(bucket_ms)
    end_us = max(ev.time_us for ev in trace)
    count = max(1, math.ceil((end_us + 1) / bucket_us))
    seconds = bucket_us / (US_PER_MS * 1000)

    busy = np.zeros((count, n + 1))
    waited = np.zeros((count, n + 1))
    sent = np.zeros((count, n + 1))
    recv = np.zeros((count, n + 1))
    queued = np.zeros((count, n + 1))
    # fila de comandos do protocolo: constante entre dois eventos do mesmo nó
    last_queued_us: Dict[int, int] = {}
    write_lat: List[List[float]] = [[] for _ in range(count)]
    read_lat: List[List[float]] = [[] for _ in range(count)]

    for ev in trace:
        b = ev.time_us // bucket_us
        d = ev.detail
        if ev.kind in ("deliver", "timer", "client_req") and "cost_us" in d:
            busy[b, ev.node] += d["cost_us"]
            waited[b, ev.node] += d.get("wait_us", 0)
        if "queued" in d and ev.node > 0:
            prev = last_queued_us.get(ev.node)
            if prev is not None:
                _spread(queued, ev.node, prev, ev.time_us, d["queued"], bucket_us)
            last_queued_us[ev.node] = ev.time_us
        if ev.kind == "send":
            sent[b, ev.node] += d.get("bytes", 0)
        elif ev.kind == "deliver":
            recv[b, ev.node] += d.get("bytes", 0)
        elif ev.kind == "client_resp":
            latency_ms = d.get("latency_us", 0) / US_PER_MS
            (write_lat if _is_write(d.get("op")) else read_lat)[b].append(latency_ms)

    # fração ocupada x fator de fila (espera na caixa de entrada + comandos retidos pelo protocolo)
    load = (busy / bucket_us) * (1 + (waited + queued) / bucket_us)
    samples: List[MetricsSample] = []
    for b in range(count):
        w = np.asarray(write_lat[b])
        r = np.asarray(read_lat[b])
        samples.append(MetricsSample(
            bucket_start_ms=us_to_ms(b * bucket_us),
            writes=len(w),
            reads=len(r),
            write_latency_mean_ms=float(w.mean()) if w.size else 0.0,
            write_latency_max_ms=float(w.max()) if w.size else 0.0,
            read_latency_mean_ms=float(r.mean()) if r.size else 0.0,
            read_latency_max_ms=float(r.max()) if r.size else 0.0,
            write_rps=len(w) / seconds,
            read_rps=len(r) / seconds,
            node_load=[float(x) for x in load[b, 1:]],
            net_sent_kb_s=[float(x) / 1024 / seconds for x in sent[b, 1:]],
            net_recv_kb_s=[float(x) / 1024 / seconds for x in recv[b, 1:]],
        ))
    return samples


# ---------------------------------------------------------
# Resumo
# ---------------------------------------------------------
def availability_gap_ms(write_done_us: Iterable[int], first_crash_us: Optional[int], horizon_us: int) -> float:
    """
    Maior intervalo sem escrita concluída a partir do primeiro crash (ou de t=0).
    O último trecho termina no fim da carga (`horizon_us`); a folga de
    encerramento da simulação fica de fora.
    """
    start = first_crash_us if first_crash_us is not None else 0
    marks = [start] + sorted(t for t in write_done_us if t >= start)
    if horizon_us > marks[-1]:
        marks.append(horizon_us)
    if len(marks) < 2:
        return 0.0
    return us_to_ms(max(b - a for a, b in zip(marks, marks[1:])))


def workload_end_us(result: WorldResult) -> int:
    """Última resposta a cliente; em livelock a carga não termina e vale o fim da execução."""
    if result.livelock:
        return result.end_us
    return max((ev.time_us for ev in result.events if ev.kind == "client_resp"), default=0)


def leader_changes(trace: Iterable[TraceEvent]) -> List[LeaderChange]:
    changes = []
    for ev in trace:
        if ev.kind == "note" and ev.detail.get("event") == "leader":
            epoch = ev.detail.get("term", ev.detail.get("ballot"))
            changes.append(LeaderChange(time_ms=ev.time_ms, node=ev.node, epoch=epoch))
    return changes


def summarize(
    protocol: str, n: int, seed: int, result: WorldResult, samples: List[MetricsSample],
) -> RunSummary:
    trace = result.events
    resps = [ev for ev in trace if ev.kind == "client_resp"]
    w = np.asarray([ev.detail["latency_us"] / US_PER_MS for ev in resps if _is_write(ev.detail.get("op"))])
    r = np.asarray([ev.detail["latency_us"] / US_PER_MS for ev in resps if not _is_write(ev.detail.get("op"))])
    write_done = [ev.time_us for ev in resps if _is_write(ev.detail.get("op"))]

    rps = np.asarray([s.write_rps for s in samples]) if samples else np.zeros(1)
    rps_mean = float(rps.mean())
    loads = np.asarray([x for s in samples for x in s.node_load]) if samples else np.zeros(1)

    return RunSummary(
        protocol=protocol,
        nodes=n,
        seed=seed,
        ops_completed=len(resps),
        ops_incomplete=result.pending,
        writes=int(w.size),
        reads=int(r.size),
        write_latency_mean_ms=float(w.mean()) if w.size else 0.0,
        write_latency_max_ms=float(w.max()) if w.size else 0.0,
        read_latency_mean_ms=float(r.mean()) if r.size else 0.0,
        read_latency_max_ms=float(r.max()) if r.size else 0.0,
        write_rps_mean=rps_mean,
        write_rps_cv=float(rps.std() / rps_mean) if rps_mean > 0 else 0.0,
        load_mean=float(loads.mean()),
        load_variance=float(loads.var()),
        net_sent_kb=sum(ev.detail.get("bytes", 0) for ev in trace if ev.kind == "send") / 1024,
        net_recv_kb=sum(ev.detail.get("bytes", 0) for ev in trace if ev.kind == "deliver") / 1024,
        messages_sent=sum(1 for ev in trace if ev.kind == "send"),
        messages_dropped=sum(1 for ev in trace if ev.kind == "drop" and "env" in ev.detail),
        first_crash_ms=us_to_ms(result.first_crash_us) if result.first_crash_us is not None else None,
        availability_gap_ms=availability_gap_ms(write_done, result.first_crash_us, workload_end_us(result)),
        leader_changes=leader_changes(trace),
        collisions=queue_service.audit(trace),
        livelock=result.livelock,
        end_time_ms=us_to_ms(result.end_us),
        trace_events=len(trace),
    )


# ---------------------------------------------------------
# Comparação
# ---------------------------------------------------------
def ratio(value: float, reference: float) -> float:
    if reference == 0:
        return 1.0 if value == 0 else math.inf
    return value / reference


def compare(results) -> ComparisonReport:
    """
    results: lista de RunResult com a mesma configuração a menos do protocolo.
    Razões sempre relativas à primeira execução.
    """
    if len(results) < 2:
        raise ComparisonMismatchError("comparação exige pelo menos duas execuções")
    base_key = results[0].config.comparable_key()
    for other in results[1:]:
        if other.config.comparable_key() != base_key:
            diff = sorted(
                k for k in base_key
                if base_key[k] != other.config.comparable_key().get(k)
            )
            raise ComparisonMismatchError(f"execuções diferem além do protocolo: {', '.join(diff)}")

    rows = []
    for metric in COMPARED_METRICS:
        values = [float(getattr(r.summary, metric)) for r in results]
        rows.append(ComparisonRow(metric=metric, values=values, ratios=[ratio(v, values[0]) for v in values]))

    first = results[0]
    return ComparisonReport(
        protocols=[r.config.protocol for r in results],
        seed=first.config.seed,
        nodes=first.config.nodes,
        rows=rows,
        summaries=[r.summary for r in results],
        samples=[r.samples for r in results],
    )


def report_text(report: ComparisonReport) -> str:
    out = io.StringIO()
    header = ["metric"] + [f"{p}[{i}]" for i, p in enumerate(report.protocols)]
    out.write(f"comparação: {' vs '.join(report.protocols)} (nós={report.nodes}, seed={report.seed})\n\n")
    out.write("  ".join(f"{h:>24}" for h in header) + "\n")
    for row in report.rows:
        cells = [row.metric] + [f"{v:.3f} (x{r:.3f})" for v, r in zip(row.values, row.ratios)]
        out.write("  ".join(f"{c:>24}" for c in cells) + "\n")
    out.write("\nreferência (VMs reais, apenas direcional):\n")
    for metric, values in report.reference.items():
        pairs = ", ".join(f"{k}={v:g}" for k, v in values.items())
        out.write(f"  {metric}: {pairs}\n")
    return out.getvalue()


# ---------------------------------------------------------
# CSV
# ---------------------------------------------------------
def metrics_columns(n: int) -> List[str]:
    cols = list(BASE_COLUMNS)
    for i in range(1, n + 1):
        cols += [f"load_n{i}", f"sent_kb_s_n{i}", f"recv_kb_s_n{i}"]
    return cols


def _row(s: MetricsSample, n: int) -> Dict[str, str]:
    row = {
        "bucket_start_ms": f"{s.bucket_start_ms:.3f}",
        "writes": str(s.writes),
        "reads": str(s.reads),
    }
    for col in BASE_COLUMNS[3:]:
        row[col] = f"{getattr(s, col):.3f}"
    for i in range(n):
        row[f"load_n{i + 1}"] = f"{s.node_load[i]:.3f}"
        row[f"sent_kb_s_n{i + 1}"] = f"{s.net_sent_kb_s[i]:.3f}"
        row[f"recv_kb_s_n{i + 1}"] = f"{s.net_recv_kb_s[i]:.3f}"
    return row


def dumps_metrics_csv(samples: List[MetricsSample], n: int) -> str:
    out = io.StringIO()
    writer = csv.DictWriter(out, fieldnames=metrics_columns(n), lineterminator="\n")
    writer.writeheader()
    for s in samples:
        writer.writerow(_row(s, n))
    return out.getvalue()


def dumps_comparison_csv(report: ComparisonReport) -> str:
    """Séries pareadas por bucket, prontas para plotar."""
    series = ["write_latency_max_ms", "write_latency_mean_ms", "read_latency_mean_ms", "write_rps", "load_mean"]
    fields = ["bucket_start_ms"] + [f"{m}_{p}{i}" for i, p in enumerate(report.protocols) for m in series]
    out = io.StringIO()
    writer = csv.DictWriter(out, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    length = max((len(s) for s in report.samples), default=0)
    for b in range(length):
        row: Dict[str, str] = {}
        for i, (p, samples) in enumerate(zip(report.protocols, report.samples)):
            if b >= len(samples):
                continue
            s = samples[b]
            row["bucket_start_ms"] = f"{s.bucket_start_ms:.3f}"
            values = {
                "write_latency_max_ms": s.write_latency_max_ms,
                "write_latency_mean_ms": s.write_latency_mean_ms,
                "read_latency_mean_ms": s.read_latency_mean_ms,
                "write_rps": s.write_rps,
                "load_mean": float(np.mean(s.node_load)) if s.node_load else 0.0,
            }
            for m in series:
                row[f"{m}_{p}{i}"] = f"{values[m]:.3f}"
        writer.writerow(row)
    return out.getvalue()


def write_text(path: Union[str, Path], text: str) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(text, encoding="utf-8")
    return p
