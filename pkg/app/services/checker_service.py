# app/services/checker_service.py
"""
Oráculo sobre traces: propriedades de consenso (acordo, validade,
integridade, terminação), segurança específica de cada protocolo,
invariantes do simulador e auditoria da fila.

Todas as funções são puras sobre a lista de TraceEvent.
"""
import logging
from collections import defaultdict
from typing import Any, Dict, Iterable, List, Optional, Sequence, Set, Tuple

from app.schemas.checker import CheckReport, Property, Violation
from app.schemas.sim import TraceEvent
from app.services import queue_service
from app.sim.trace import is_end_marker

log = logging.getLogger(__name__)

Trace = Sequence[TraceEvent]


def _violation(prop: Property, evidence: Sequence[TraceEvent], message: str, nodes: Optional[Iterable[int]] = None) -> Violation:
    evidence = list(evidence)
    if nodes is None:
        nodes = {ev.node for ev in evidence}
    return Violation(
        property=prop,
        time_ms=min((ev.time_ms for ev in evidence), default=0.0),
        nodes=sorted(set(nodes)),
        message=message,
        evidence=evidence,
        evidence_offsets=[ev.seq for ev in evidence],
    )


def _of_kind(trace: Trace, kind: str) -> List[TraceEvent]:
    return [ev for ev in trace if ev.kind == kind]


def _notes(trace: Trace, event: str) -> List[TraceEvent]:
    return [ev for ev in trace if ev.kind == "note" and ev.detail.get("event") == event]


def boot_info(trace: Trace) -> Dict[str, Any]:
    for ev in trace:
        if ev.kind == "timer" and ev.detail.get("label") == "boot":
            return ev.detail
    return {}


# ---------------------------------------------------------
# Propriedades de consenso
# ---------------------------------------------------------
def check_agreement(trace: Trace) -> List[Violation]:
    by_index: Dict[int, Dict[str, TraceEvent]] = defaultdict(dict)
    for ev in _of_kind(trace, "decide"):
        by_index[ev.detail["index"]].setdefault(ev.detail["value"], ev)
    return [
        _violation("agreement", list(values.values()), f"índice {idx} decidido com {len(values)} valores")
        for idx, values in sorted(by_index.items())
        if len(values) > 1
    ]


def check_validity(trace: Trace) -> List[Violation]:
    proposed: Set[str] = {"noop"}
    for ev in _of_kind(trace, "client_req"):
        proposed.add(ev.detail["command"]["id"])
    return [
        _violation("validity", [ev], f"valor nunca proposto: {ev.detail['value']}")
        for ev in _of_kind(trace, "decide")
        if ev.detail["value"] not in proposed
    ]


def check_integrity(trace: Trace) -> List[Violation]:
    # um restart recomeça a contagem: o nó reaprende o que já tinha decidido
    seen: Dict[Tuple[int, int, int], TraceEvent] = {}
    out = []
    for ev in _of_kind(trace, "decide"):
        key = (ev.node, ev.detail.get("incarnation", 0), ev.detail["index"])
        if key in seen:
            out.append(_violation("integrity", [seen[key], ev], f"nó {ev.node} decidiu o índice {key[2]} duas vezes"))
        else:
            seen[key] = ev
    return out


def max_concurrent_crashes(trace: Trace) -> int:
    down: Set[int] = set()
    worst = 0
    for ev in trace:
        if ev.kind == "crash":
            down.add(ev.node)
            worst = max(worst, len(down))
        elif ev.kind == "restart":
            down.discard(ev.node)
    return worst


def _partition_open_at_end(trace: Trace) -> bool:
    opened = len(_notes(trace, "partition_start"))
    closed = len(_notes(trace, "partition_end"))
    return opened > closed


def termination_applicable(trace: Trace) -> Tuple[bool, str]:
    info = boot_info(trace)
    n = info.get("n", 0)
    if not n:
        return False, "trace sem registro de boot"
    if info.get("protocol") == "baseline":
        return False, "baseline sem consenso"
    if 2 * max_concurrent_crashes(trace) >= n:
        return False, "crashes simultâneos >= n/2"
    if _partition_open_at_end(trace):
        return False, "partição ativa no fim da execução"
    return True, ""


def check_termination(trace: Trace) -> List[Violation]:
    """Pressupõe termination_applicable; nós vivos no fim são os que emitiram final_log."""
    out: List[Violation] = []
    answered = {ev.detail["command_id"] for ev in _of_kind(trace, "client_resp")}
    first_req: Dict[str, TraceEvent] = {}
    for ev in _of_kind(trace, "client_req"):
        first_req.setdefault(ev.detail["command"]["id"], ev)
    missing = [ev for cid, ev in first_req.items() if cid not in answered]
    if missing:
        out.append(_violation("termination", missing[:10], f"{len(missing)} operações sem resposta"))

    last_applied: Dict[int, int] = defaultdict(int)
    for ev in _of_kind(trace, "apply"):
        last_applied[ev.node] = max(last_applied[ev.node], ev.detail["index"])
    top = max(last_applied.values(), default=0)
    for ev in _notes(trace, "final_log"):
        if last_applied[ev.node] < top:
            out.append(_violation(
                "termination", [ev],
                f"nó {ev.node} aplicou até {last_applied[ev.node]} de {top}",
            ))
    return out


# ---------------------------------------------------------
# Raft
# ---------------------------------------------------------
def check_raft_state_machine_safety(trace: Trace) -> List[Violation]:
    by_index: Dict[int, Dict[str, TraceEvent]] = defaultdict(dict)
    for ev in _of_kind(trace, "apply"):
        by_index[ev.detail["index"]].setdefault(ev.detail["value"], ev)
    return [
        _violation("raft_state_machine_safety", list(v.values()), f"comandos diferentes aplicados no índice {idx}")
        for idx, v in sorted(by_index.items())
        if len(v) > 1
    ]


def check_raft_election_safety(trace: Trace) -> List[Violation]:
    leaders: Dict[int, Dict[int, TraceEvent]] = defaultdict(dict)
    for ev in _notes(trace, "leader"):
        if "term" in ev.detail:
            leaders[ev.detail["term"]].setdefault(ev.node, ev)
    return [
        _violation("raft_election_safety", list(nodes.values()), f"{len(nodes)} líderes no termo {term}")
        for term, nodes in sorted(leaders.items())
        if len(nodes) > 1
    ]


def check_raft_log_matching(trace: Trace) -> List[Violation]:
    finals = [ev for ev in _notes(trace, "final_log") if "log" in ev.detail]
    out = []
    for i, a in enumerate(finals):
        for b in finals[i + 1:]:
            la, lb = a.detail["log"], b.detail["log"]
            # último índice em que termos coincidem: o prefixo inteiro tem que coincidir
            for idx in range(min(len(la), len(lb)) - 1, -1, -1):
                if la[idx][0] == lb[idx][0]:
                    if la[: idx + 1] != lb[: idx + 1]:
                        out.append(_violation(
                            "raft_log_matching", [a, b],
                            f"nós {a.node} e {b.node} têm o termo {la[idx][0]} no índice {idx + 1} com prefixos diferentes",
                        ))
                    break
    # instantâneos durante a execução: mesmo (índice, termo) implica mesmo prefixo
    first: Dict[Tuple[int, int], TraceEvent] = {}
    for ev in _notes(trace, "log_digest"):
        key = (ev.detail["index"], ev.detail["term"])
        ref = first.setdefault(key, ev)
        if ref.detail["digest"] != ev.detail["digest"]:
            out.append(_violation(
                "raft_log_matching", [ref, ev],
                f"nós {ref.node} e {ev.node} têm o termo {key[1]} no índice {key[0]} com prefixos diferentes",
            ))
    return out


def check_raft_leader_completeness(trace: Trace) -> List[Violation]:
    """
    Entradas decididas antes de existir qualquer líder de termo >= T foram
    commitadas em termo < T; o líder de T precisa tê-las no log.
    """
    leader_notes = [ev for ev in _notes(trace, "leader") if "term" in ev.detail]
    decides = _of_kind(trace, "decide")
    out = []
    for note in leader_notes:
        term = note.detail["term"]
        horizon = min(ev.seq for ev in leader_notes if ev.detail["term"] >= term)
        log_ = note.detail.get("log", [])
        for d in decides:
            if d.seq > horizon:
                break
            idx = d.detail["index"]
            if idx > len(log_) or log_[idx - 1][1] != d.detail["value"]:
                out.append(_violation(
                    "raft_leader_completeness", [d, note],
                    f"líder do termo {term} (nó {note.node}) não tem a entrada {idx}={d.detail['value']}",
                ))
    return out


def check_raft_safety(trace: Trace) -> List[Violation]:
    return (
        check_raft_state_machine_safety(trace)
        + check_raft_election_safety(trace)
        + check_raft_log_matching(trace)
        + check_raft_leader_completeness(trace)
    )


# ---------------------------------------------------------
# Paxos / Chandra-Toueg
# ---------------------------------------------------------
def check_paxos_single_value(trace: Trace) -> List[Violation]:
    """Por slot: decides e mensagens commit entregues carregam o mesmo valor."""
    by_slot: Dict[int, Dict[str, TraceEvent]] = defaultdict(dict)
    for ev in trace:
        if ev.kind == "decide":
            by_slot[ev.detail["index"]].setdefault(ev.detail["value"], ev)
        elif ev.kind == "deliver" and ev.detail.get("type") == "commit":
            payload = ev.detail.get("payload") or {}
            cmd = payload.get("command") or {}
            if "slot" in payload and "id" in cmd:
                by_slot[payload["slot"]].setdefault(cmd["id"], ev)
    return [
        _violation("paxos_single_value", list(v.values()), f"slot {slot} com {len(v)} valores escolhidos")
        for slot, v in sorted(by_slot.items())
        if len(v) > 1
    ]


def check_ct_locked_value(trace: Trace) -> List[Violation]:
    collects = _notes(trace, "collect")
    out = []
    for lock in _notes(trace, "locked"):
        slot, r, value = lock.detail["slot"], lock.detail["round"], lock.detail["value"]
        for c in collects:
            if c.detail["slot"] != slot or c.detail["round"] <= r:
                continue
            carries = any(ts >= r and v == value for _, ts, _, v in c.detail.get("entries", []))
            if c.detail["value"] != value or not carries:
                out.append(_violation(
                    "ct_locked_value", [lock, c],
                    f"slot {slot}: valor {value} travado na rodada {r}, rodada {c.detail['round']} escolheu {c.detail['value']}",
                ))
    return out


# ---------------------------------------------------------
# Invariantes do simulador
# ---------------------------------------------------------
def check_causality(trace: Trace) -> List[Violation]:
    sends: Dict[int, TraceEvent] = {}
    out = []
    for ev in trace:
        if ev.kind == "send":
            sends.setdefault(ev.detail["env"], ev)
        elif ev.kind == "deliver":
            s = sends.get(ev.detail["env"])
            if s is None or s.node != ev.detail.get("src") or s.time_us > ev.time_us:
                out.append(_violation("causality", [ev] + ([s] if s else []), f"entrega do envelope {ev.detail['env']} sem send anterior"))
    return out


def check_dead_silence(trace: Trace) -> List[Violation]:
    down: Dict[int, TraceEvent] = {}
    out = []
    for ev in trace:
        if ev.kind == "crash":
            down[ev.node] = ev
        elif ev.kind == "restart":
            down.pop(ev.node, None)
        elif ev.node in down:
            out.append(_violation("dead_silence", [down[ev.node], ev], f"evento '{ev.kind}' no nó {ev.node} enquanto fora do ar"))
    return out


def check_partition_soundness(trace: Trace) -> List[Violation]:
    active: List[Tuple[Set[int], Set[int]]] = []
    out = []
    for ev in trace:
        if ev.kind == "note" and ev.detail.get("event") == "partition_start":
            active.append((set(ev.detail["side_a"]), set(ev.detail["side_b"])))
        elif ev.kind == "note" and ev.detail.get("event") == "partition_end":
            sides = (set(ev.detail["side_a"]), set(ev.detail["side_b"]))
            if sides in active:
                active.remove(sides)
        elif ev.kind == "deliver":
            a, b = ev.detail.get("src"), ev.node
            if any((a in x and b in y) or (a in y and b in x) for x, y in active):
                out.append(_violation("partition_soundness", [ev], f"entrega {a}->{b} atravessa partição ativa"))
    return out


def check_monotone_time(trace: Trace) -> List[Violation]:
    out = []
    for prev, ev in zip(trace, trace[1:]):
        if ev.time_us < prev.time_us or ev.seq != prev.seq + 1:
            out.append(_violation("monotone_time", [prev, ev], "tempo decrescente ou seq fora de ordem"))
    return out


def check_apply_monotonicity(trace: Trace) -> List[Violation]:
    last: Dict[int, TraceEvent] = {}
    out = []
    for ev in _of_kind(trace, "apply"):
        prev = last.get(ev.node)
        if prev is not None and ev.detail["index"] <= prev.detail["index"]:
            out.append(_violation("apply_monotonicity", [prev, ev], f"nó {ev.node} aplicou {ev.detail['index']} depois de {prev.detail['index']}"))
        last[ev.node] = ev
    return out


def check_closed_loop_bound(trace: Trace) -> List[Violation]:
    info = boot_info(trace)
    if not info.get("closed_loop", False):
        return []
    limit = info.get("clients", 0)
    issued: Dict[str, int] = {}
    finished: Dict[str, Tuple[int, TraceEvent]] = {}
    for ev in trace:
        if ev.kind == "client_req":
            issued.setdefault(ev.detail["command"]["id"], ev.detail["issued_us"])
        elif ev.kind == "client_resp":
            issued.setdefault(ev.detail["command_id"], ev.detail["issued_us"])
            finished[ev.detail["command_id"]] = (ev.time_us, ev)
    # respostas antes de emissões no mesmo instante
    marks = sorted(
        [(t, 1, cid) for cid, t in issued.items()]
        + [(t, -1, cid) for cid, (t, _) in finished.items()],
        key=lambda m: (m[0], m[1]),
    )
    inflight = 0
    for t, delta, cid in marks:
        inflight += delta
        if inflight > limit:
            evidence = [finished[cid][1]] if cid in finished else []
            return [_violation(
                "closed_loop_bound", evidence,
                f"{inflight} requisições em voo em {t / 1000:.3f}ms (limite {limit})", nodes=[0],
            )]
    return []


# ---------------------------------------------------------
# Fila
# ---------------------------------------------------------
def check_queue(trace: Trace) -> List[Violation]:
    report = queue_service.audit(trace)
    if report.duplicate_pops == 0 and report.ghost_jobs == 0:
        return []
    out = []
    resps = [ev for ev in _of_kind(trace, "client_resp") if ev.detail.get("op") == "pop"]
    for job_id in report.duplicate_job_ids:
        ev = [e for e in resps if (e.detail.get("result") or {}).get("job_id") == job_id]
        out.append(_violation("duplicate_pop", ev, f"job {job_id} entregue a mais de um pop", nodes=[e.detail["served_by"] for e in ev]))
    for job_id in report.ghost_job_ids:
        ev = [e for e in resps if (e.detail.get("result") or {}).get("job_id") == job_id]
        out.append(_violation("ghost_job", ev, f"job {job_id} retirado sem enqueue", nodes=[e.detail["served_by"] for e in ev]))
    return out


# ---------------------------------------------------------
# Execução completa
# ---------------------------------------------------------
GENERAL_CHECKS = (
    check_agreement, check_validity, check_integrity,
    check_causality, check_dead_silence, check_partition_soundness,
    check_monotone_time, check_apply_monotonicity, check_closed_loop_bound,
)
PROTOCOL_CHECKS = {
    "raft": (check_raft_state_machine_safety, check_raft_election_safety, check_raft_log_matching, check_raft_leader_completeness),
    "paxos": (check_paxos_single_value,),
    "ct": (check_ct_locked_value,),
}


def check_trace(trace: Trace) -> CheckReport:
    report = CheckReport()
    if not trace:
        return report
    body = list(trace[:-1]) if is_end_marker(trace[-1]) else list(trace)
    protocol = boot_info(trace).get("protocol")

    for check in GENERAL_CHECKS + PROTOCOL_CHECKS.get(protocol, ()):
        report.violations.extend(check(body))
    for other, checks in PROTOCOL_CHECKS.items():
        if other != protocol:
            report.not_applicable.extend(c.__name__.removeprefix("check_") for c in checks)

    if protocol == "baseline":
        report.not_applicable += ["duplicate_pop", "ghost_job"]
    else:
        report.violations.extend(check_queue(body))

    ok, reason = termination_applicable(body)
    if ok:
        report.violations.extend(check_termination(body))
    else:
        report.not_applicable.append(f"termination ({reason})")

    if report.violations:
        log.warning("%d violações encontradas (%s)", len(report.violations), ", ".join(sorted({v.property for v in report.violations})))
    return report


def dumps_violations(violations: Iterable[Violation]) -> str:
    return "".join(v.model_dump_json() + "\n" for v in violations)
