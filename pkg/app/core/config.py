# app/core/config.py
from typing import List, Any
from pydantic_settings import BaseSettings, SettingsConfigDict
from pydantic import field_validator


class Settings(BaseSettings):
    # Ambiente
    ENV: str = "dev"
    LOG_LEVEL: str = "INFO"

    # Onde os artefatos de execução (trace, métricas, relatórios) são gravados
    OUTPUT_DIR: str = "runs"

    # --- Rede simulada (padrão: LAN entre VMs, 1–10 ms, sem perdas) ---
    DEFAULT_LATENCY: str = "uniform:1:10"
    MAX_VIRTUAL_TIME_MS: int = 600_000

    # --- Temporizadores dos protocolos (ms virtuais) ---
    ELECTION_TIMEOUT_MIN_MS: int = 150
    ELECTION_TIMEOUT_MAX_MS: int = 300
    HEARTBEAT_MS: int = 50
    # Paxos: silêncio tolerado antes da vez do sucessor (max) e passo entre vezes (max - min)
    LEADER_TIMEOUT_MIN_MS: int = 300
    LEADER_TIMEOUT_MAX_MS: int = 450
    FD_TIMEOUT_MS: int = 200
    FD_HEARTBEAT_MS: int = 50
    RETRY_MS: int = 100

    # --- Clientes ---
    CLIENT_TIMEOUT_MS: int = 500
    REDIRECT_BACKOFF_MS: int = 20

    # --- Custo de processamento por evento (proxy de "OS load") ---
    PROCESSING_COST_US: int = 100
    PROCESSING_COST_PER_KB_US: int = 20

    # --- Coleta de métricas / encerramento ---
    SETTLE_MS: int = 1000
    BUCKET_MS: int = 1000

    # --- Corpus de fuzz e paralelismo da matriz ---
    FUZZ_SEEDS: int = 20
    MATRIX_WORKERS: int = 0  # 0 = número de CPUs

    # --- CORS (origens permitidas na API HTTP) ---
    BACKEND_CORS_ORIGINS: List[str] = [
        "http://localhost:5173",
        "http://127.0.0.1:5173",
    ]

    model_config = SettingsConfigDict(
        env_file=".env",
        extra="ignore",
    )

    @field_validator("BACKEND_CORS_ORIGINS", mode="before")
    @classmethod
    def parse_cors_origins(cls, v: Any) -> List[str]:
        """
        Origens que podem chamar /api/v1/experiments e /api/v1/traces.
        Vindo do ambiente, a lista chega como texto: lista JSON
        (`["http://localhost:8080"]`) ou valores separados por vírgula.
        Valor de outro tipo volta ao padrão do laboratório.
        """
        if isinstance(v, str):
            s = v.strip()
            if s.startswith("[") and s.endswith("]"):
                import json
                try:
                    parsed = json.loads(s)
                    if isinstance(parsed, list):
                        return [str(i).strip() for i in parsed if str(i).strip()]
                except Exception:
                    pass
            return [i.strip() for i in s.split(",") if i.strip()]
        if isinstance(v, (list, tuple)):
            return [str(i).strip() for i in v if str(i).strip()]
        return list(cls.model_fields["BACKEND_CORS_ORIGINS"].default)

    @field_validator("ELECTION_TIMEOUT_MAX_MS", "LEADER_TIMEOUT_MAX_MS")
    @classmethod
    def max_not_below_min(cls, v: int, info) -> int:
        low_key = info.field_name.replace("_MAX_", "_MIN_")
        low = info.data.get(low_key)
        if low is not None and v < low:
            raise ValueError(f"{info.field_name} deve ser >= {low_key}")
        return v


settings = Settings()
