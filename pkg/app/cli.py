# app/cli.py
"""
Superfície de operação: `python -m app <subcomando>`.

Mapeamento das flags do stress tool: -n -> --ops, -t -> --clients,
-b/-c -> --payload-bytes, -o insert -> --mix 1.0.
"""
import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

from app.core.config import settings
from app.core.errors import CheckViolationError, LabError
from app.core.logging import setup_logging
from app.protocols.base import protocol_names
from app.schemas.experiment import ExperimentConfig
from app.services import bench_service, config_service, experiment_service, modelcheck_service
from app.sim.trace import read_trace
from app.startup import ensure_output_dir

log = logging.getLogger(__name__)

# flag -> chave plana usada pelo config_service
OVERRIDES = {
    "protocol": "protocol",
    "nodes": "nodes",
    "ops": "ops",
    "clients": "clients",
    "payload_bytes": "payload_bytes",
    "mix": "mix",
    "seed": "seed",
    "ramp": "ramp",
    "check": "check",
    "out": "out",
    "buckets_ms": "bucket_ms",
    "sync_delay_ms": "sync_delay_ms",
    "pop_fraction": "pop_fraction",
    "max_time_ms": "max_time_ms",
    "drop": "drop",
    "latency": "latency",
}


def _experiment_flags(p: argparse.ArgumentParser, with_protocol: bool = True) -> None:
    p.add_argument("--config", help="arquivo de experimento (seções [experiment], [workload], ...)")
    if with_protocol:
        p.add_argument("--protocol", choices=["raft", "paxos", "ct", "baseline"])
    p.add_argument("--nodes", type=int)
    p.add_argument("--ops", type=int, help="total de operações (-n)")
    p.add_argument("--clients", type=int, help="clientes simultâneos (-t)")
    p.add_argument("--payload-bytes", type=int, help="bytes por operação (-b/-c)")
    p.add_argument("--mix", type=float, help="fração de escritas (1.0 = -o insert)")
    p.add_argument("--pop-fraction", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--faults", help="arquivo com a seção [faults]")
    p.add_argument("--net", help="arquivo com a seção [network]")
    p.add_argument("--ramp", help="degraus at_ms:clientes, ex.: 0:1,2000:3")
    p.add_argument("--latency", help="fixed:5 | uniform:1:10 | lognormal:1:0.5")
    p.add_argument("--drop", type=float)
    p.add_argument("--max-time-ms", type=int)
    p.add_argument("--sync-delay-ms", type=float, help="intervalo de sincronização da baseline")
    p.add_argument("--check", action="store_true", default=None)
    p.add_argument("--out", help="diretório de saída")
    p.add_argument("--buckets-ms", type=int)


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    return {key: getattr(args, flag, None) for flag, key in OVERRIDES.items()}


def _load(args: argparse.Namespace, **extra) -> ExperimentConfig:
    overrides = _overrides(args)
    overrides.update({k: v for k, v in extra.items() if v is not None})
    return config_service.load_config(args.config, overrides, faults_path=args.faults, net_path=args.net)


def _print_json(data: Any) -> None:
    print(json.dumps(data, indent=2, ensure_ascii=False, default=str))


# ---------------------------------------------------------
# subcomandos
# ---------------------------------------------------------
def cmd_run(args: argparse.Namespace) -> int:
    config = _load(args)
    if args.scenario == "collision":
        config = experiment_service.collision_config(config)
    ensure_output_dir()
    try:
        result, files = experiment_service.execute(config)
    except CheckViolationError as e:
        for v in e.violations:
            log.error("violação %s em %.3fms: %s", v.property, v.time_ms, v.message)
        raise
    _print_json({
        "summary": result.summary.model_dump(mode="json", exclude={"leader_changes"}),
        "leader_changes": [c.model_dump(mode="json") for c in result.summary.leader_changes],
        "files": {k: str(v) for k, v in files.items()},
    })
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    protocols = [p.strip() for p in args.protocols.split(",") if p.strip()]
    configs = [_load(args, protocol=p) for p in protocols]
    ensure_output_dir()
    results, report = experiment_service.compare(configs)
    out = Path(args.out or Path(settings.OUTPUT_DIR) / f"compare-{'-'.join(protocols)}-s{configs[0].seed}")
    for i, r in enumerate(results):
        experiment_service.write_artifacts(r, out / f"{i}-{r.config.protocol}")
    experiment_service.write_comparison(report, out)
    print(bench_service.report_text(report))
    return 0


def cmd_replay(args: argparse.Namespace) -> int:
    verdict = experiment_service.replay(read_trace(args.trace))
    _print_json(verdict.model_dump(mode="json", exclude={"check": {"violations": {"__all__": {"evidence"}}}}))
    if verdict.check.violations:
        raise CheckViolationError(f"{len(verdict.check.violations)} violações", verdict.check.violations)
    return 0 if verdict.ok else 1


def cmd_matrix(args: argparse.Namespace) -> int:
    protocols = [p.strip() for p in args.protocols.split(",") if p.strip()]
    seeds = range(args.seed_start, args.seed_start + (args.seeds or settings.FUZZ_SEEDS))
    if args.scenario == "fuzz":
        configs = [
            experiment_service.fuzz_config(p, s, nodes=args.nodes, ops=args.ops, drop=args.drop)
            for s in seeds for p in protocols
        ]
    else:
        configs = [experiment_service.leader_crash_config(p, s, nodes=args.nodes, ops=args.ops) for s in seeds for p in protocols]
    results = experiment_service.matrix(configs, workers=args.workers, keep_trace=args.keep_traces)

    # coletor único
    out = Path(args.out or Path(settings.OUTPUT_DIR) / f"matrix-{args.scenario}")
    out.mkdir(parents=True, exist_ok=True)
    failures = 0
    with (out / "matrix.csv").open("w", encoding="utf-8", newline="") as fh:
        fields = [
            "protocol", "seed", "ops_completed", "write_latency_max_ms", "load_variance",
            "availability_gap_ms", "livelock", "violations",
        ]
        writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for r in results:
            violations = len(r.check.violations) if r.check else 0
            failures += violations + int(r.summary.livelock)
            s = r.summary
            writer.writerow({
                "protocol": s.protocol, "seed": s.seed, "ops_completed": s.ops_completed,
                "write_latency_max_ms": f"{s.write_latency_max_ms:.3f}",
                "load_variance": f"{s.load_variance:.3f}",
                "availability_gap_ms": f"{s.availability_gap_ms:.3f}",
                "livelock": s.livelock, "violations": violations,
            })
            if violations or args.keep_traces:
                experiment_service.write_artifacts(r, out / f"{s.protocol}-s{s.seed}")
    print(f"{len(results)} execuções, {failures} com violação ou livelock -> {out / 'matrix.csv'}")
    return 3 if failures else 0


def cmd_modelcheck(args: argparse.Namespace) -> int:
    result = modelcheck_service.explore(max_depth=args.depth, check_promise=not args.broken)
    _print_json(result.model_dump(mode="json"))
    if args.broken:
        # a variante quebrada precisa ser pega
        return 0 if not result.ok else 1
    return 0 if result.ok else 3


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    uvicorn.run("app.main:app", host=args.host, port=args.port, log_level=settings.LOG_LEVEL.lower())
    return 0


# ---------------------------------------------------------
# parser
# ---------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="consensus-lab", description="Laboratório de consenso determinístico")
    parser.add_argument("--log-level", default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="executa uma simulação")
    _experiment_flags(p)
    p.add_argument("--scenario", choices=["collision"], help="carga roteirizada (colisão de workers)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="mesma configuração, protocolos diferentes")
    _experiment_flags(p, with_protocol=False)
    p.add_argument("--protocols", default="paxos,raft")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("replay", help="reexecuta um trace e verifica")
    p.add_argument("trace")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("matrix", help="várias seeds em paralelo")
    p.add_argument("--protocols", default=",".join(x for x in protocol_names() if x != "baseline"))
    p.add_argument("--scenario", choices=["fuzz", "leader-crash"], default="fuzz")
    p.add_argument("--seeds", type=int)
    p.add_argument("--seed-start", type=int, default=0)
    p.add_argument("--nodes", type=int, default=4)
    p.add_argument("--ops", type=int, default=500)
    p.add_argument("--drop", type=float, default=0.01)
    p.add_argument("--workers", type=int)
    p.add_argument("--keep-traces", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_matrix)

    p = sub.add_parser("modelcheck", help="exploração exaustiva do Paxos de um slot")
    p.add_argument("--depth", type=int, default=modelcheck_service.DEFAULT_DEPTH)
    p.add_argument("--broken", action="store_true", help="remove a verificação de promessa")
    p.set_defaults(func=cmd_modelcheck)

    p = sub.add_parser("serve", help="API HTTP")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level)
    try:
        return args.func(args)
    except LabError as e:
        log.error("%s: %s", type(e).__name__, e)
        print(f"erro: {e}", file=sys.stderr)
        return e.exit_code
