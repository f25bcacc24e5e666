# app/sim/rng.py
import hashlib
import random
from typing import Dict

# rótulos fixos; novos consumidores ganham rótulos novos e não perturbam os demais
LATENCY = "latency"
DROP = "drop"
DUPLICATE = "duplicate"
WORKLOAD = "workload"
FAULTS = "faults"


def timeouts_label(node: int) -> str:
    return f"timeouts:{node}"


def derive_seed(master_seed: int, label: str) -> int:
    digest = hashlib.blake2b(f"{master_seed}:{label}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big")


class RngStreams:
    """Um random.Random por propósito, derivado da semente mestra."""

    def __init__(self, master_seed: int):
        self.master_seed = master_seed
        self._streams: Dict[str, random.Random] = {}

    def stream(self, label: str) -> random.Random:
        rng = self._streams.get(label)
        if rng is None:
            rng = random.Random(derive_seed(self.master_seed, label))
            self._streams[label] = rng
        return rng
