# app/schemas/common.py
from typing import Annotated

from pydantic import BaseModel, ConfigDict, Field

# Nós são numerados 1..n; 0 é reservado para a "rede" (eventos sem dono).
NodeId = Annotated[int, Field(ge=0)]
NETWORK_NODE = 0

US_PER_MS = 1000


def ms_to_us(ms: float) -> int:
    return int(round(ms * US_PER_MS))


def us_to_ms(us: int) -> float:
    return us / US_PER_MS


def majority(n: int) -> int:
    """Tamanho do quórum: floor(n/2) + 1."""
    if n < 1:
        raise ValueError("n deve ser >= 1")
    return n // 2 + 1


class FrozenModel(BaseModel):
    """Base para valores imutáveis (mensagens, entradas de log, ações)."""
    model_config = ConfigDict(frozen=True)
