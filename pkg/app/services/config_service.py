# app/services/config_service.py
"""
Arquivo de experimento (texto chave=valor com seções) + flags da CLI.

    [experiment]   protocol, nodes, seed, check, bucket_ms, + campos de ProtocolParams
    [workload]     ops, clients, payload_bytes, mix, pop_fraction, think_time_ms, ramp
    [network]      latency, drop, duplicate, max_time_ms, processing_cost_us,
                   processing_cost_per_kb_us, settle_ms
    [faults]       crash.N = nó@crash_ms[:restart_ms]   (nó 0 = líder do momento)
                   partition.N = 1,2|3,4@inicio_ms-fim_ms
    [output]       out

Flags sobrescrevem chaves do arquivo.
"""
import configparser
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from pydantic import ValidationError

from app.core.errors import ConfigError
from app.schemas.consensus import ProtocolParams
from app.schemas.experiment import ExperimentConfig
from app.schemas.sim import CrashSpec, FaultPlan, PartitionSpec

log = logging.getLogger(__name__)

SECTIONS = ("experiment", "workload", "network", "faults", "output")

# chave do arquivo / flag -> (seção do modelo, campo)
WORKLOAD_KEYS = {
    "ops": "op_count",
    "clients": "client_concurrency",
    "payload_bytes": "payload_bytes",
    "mix": "mix",
    "pop_fraction": "pop_fraction",
    "think_time_ms": "think_time_ms",
    "ramp": "ramp",
}
NETWORK_KEYS = {
    "latency": "latency_model",
    "drop": "drop_probability",
    "duplicate": "duplicate_probability",
    "max_time_ms": "max_virtual_time_ms",
    "processing_cost_us": "processing_cost_us",
    "processing_cost_per_kb_us": "processing_cost_per_kb_us",
    "settle_ms": "settle_ms",
}
EXPERIMENT_KEYS = ("protocol", "nodes", "seed", "check", "bucket_ms")
PARAM_KEYS = tuple(ProtocolParams.model_fields)


# ---------------------------------------------------------
# Falhas
# ---------------------------------------------------------
def parse_crash(text: str) -> CrashSpec:
    node, _, times = text.strip().partition("@")
    crash, _, restart = times.partition(":")
    try:
        return CrashSpec(
            node=int(node),
            crash_at_ms=float(crash),
            restart_at_ms=float(restart) if restart.strip() else None,
        )
    except (ValueError, ValidationError) as e:
        raise ConfigError(f"crash inválido '{text}': {e}") from e


def parse_partition(text: str) -> PartitionSpec:
    sides, _, window = text.strip().partition("@")
    a, _, b = sides.partition("|")
    start, _, end = window.partition("-")
    try:
        return PartitionSpec(
            side_a=[int(x) for x in a.split(",") if x.strip()],
            side_b=[int(x) for x in b.split(",") if x.strip()],
            start_ms=float(start),
            end_ms=float(end),
        )
    except (ValueError, ValidationError) as e:
        raise ConfigError(f"partição inválida '{text}': {e}") from e


def parse_faults(section: Dict[str, str]) -> FaultPlan:
    crashes: List[CrashSpec] = []
    partitions: List[PartitionSpec] = []
    for key in sorted(section, key=_fault_order):
        kind = key.split(".", 1)[0]
        if kind == "crash":
            crashes.append(parse_crash(section[key]))
        elif kind == "partition":
            partitions.append(parse_partition(section[key]))
        else:
            raise ConfigError(f"chave de falha desconhecida: {key}")
    return FaultPlan(crashes=crashes, partitions=partitions)


def _fault_order(key: str):
    kind, _, idx = key.partition(".")
    return (kind, int(idx) if idx.isdigit() else 0, idx)


# ---------------------------------------------------------
# Arquivo
# ---------------------------------------------------------
def _read(path: Union[str, Path]) -> configparser.ConfigParser:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"arquivo de configuração não encontrado: {p}")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(p.read_text(encoding="utf-8"), source=str(p))
    except configparser.Error as e:
        raise ConfigError(f"{p}: {e}") from e
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"{p}: seção desconhecida [{section}]")
    return parser


def _section(parser: configparser.ConfigParser, name: str) -> Dict[str, str]:
    return dict(parser.items(name)) if parser.has_section(name) else {}


def file_to_dict(parser: configparser.ConfigParser) -> Dict[str, Any]:
    """Converte as seções no formato de flags (chaves planas, valores texto)."""
    flat: Dict[str, Any] = {}
    for section in ("experiment", "workload", "network", "output"):
        flat.update(_section(parser, section))
    faults = _section(parser, "faults")
    if faults:
        flat["faults"] = parse_faults(faults)
    return flat


def load_file(path: Union[str, Path]) -> Dict[str, Any]:
    return file_to_dict(_read(path))


def build_config(values: Dict[str, Any]) -> ExperimentConfig:
    """Valores planos (arquivo + flags) -> ExperimentConfig validado."""
    known = set(EXPERIMENT_KEYS) | set(WORKLOAD_KEYS) | set(NETWORK_KEYS) | set(PARAM_KEYS) | {"faults", "out"}
    unknown = sorted(k for k, v in values.items() if k not in known and v is not None)
    if unknown:
        raise ConfigError(f"chaves desconhecidas: {', '.join(unknown)}")

    data: Dict[str, Any] = {k: values[k] for k in EXPERIMENT_KEYS if values.get(k) is not None}
    workload = {field: values[k] for k, field in WORKLOAD_KEYS.items() if values.get(k) is not None}
    network = {field: values[k] for k, field in NETWORK_KEYS.items() if values.get(k) is not None}
    params = {k: values[k] for k in PARAM_KEYS if values.get(k) is not None}
    if workload:
        data["workload"] = workload
    if network:
        data["network"] = network
    if params:
        data["params"] = ProtocolParams.from_settings(**params)
    if values.get("faults") is not None:
        data["faults"] = values["faults"]
    if values.get("out") is not None:
        data["out_dir"] = values["out"]
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(x) for x in first.get("loc", ()))
        raise ConfigError(f"configuração inválida ({where}): {first.get('msg')}") from e


def load_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Dict[str, Any]] = None,
    faults_path: Optional[Union[str, Path]] = None,
    net_path: Optional[Union[str, Path]] = None,
) -> ExperimentConfig:
    values: Dict[str, Any] = load_file(path) if path else {}
    if net_path:
        values.update(_section(_read(net_path), "network"))
    if faults_path:
        values["faults"] = parse_faults(_section(_read(faults_path), "faults"))
    for k, v in (overrides or {}).items():
        if v is not None:
            values[k] = v
    config = build_config(values)
    log.debug("configuração: %s", config.model_dump(mode="json"))
    return config
