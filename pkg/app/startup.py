# app/startup.py
import logging
from pathlib import Path

from app.core.config import settings

log = logging.getLogger(__name__)


def ensure_output_dir() -> Path:
    """
    Cria (ou verifica) o diretório de artefatos das execuções.
    Executa no startup via lifespan em main.py e antes de cada `run` da CLI.
    """
    out = Path(settings.OUTPUT_DIR)
    out.mkdir(parents=True, exist_ok=True)
    log.info("diretório de saída: %s", out.resolve())
    return out
