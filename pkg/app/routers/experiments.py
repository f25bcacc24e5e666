# app/routers/experiments.py
from typing import List

from fastapi import APIRouter, HTTPException, status

from app.core.errors import ComparisonMismatchError, LabError
from app.schemas.bench import ComparisonReport
from app.schemas.experiment import ExperimentConfig, RunResult
from app.services import experiment_service

router = APIRouter(prefix="/experiments", tags=["experiments"])


# ----------------- execução única -----------------
@router.post("/run", response_model=RunResult)
def run(config: ExperimentConfig):
    """
    Executa uma simulação e devolve resumo + amostras por bucket.
    Com `check=true`, inclui as violações encontradas (sem erro HTTP).
    """
    try:
        return experiment_service.run_experiment(config)
    except LabError as e:
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(e))


# ----------------- comparação -----------------
@router.post("/compare", response_model=ComparisonReport)
def compare(configs: List[ExperimentConfig]):
    try:
        _, report = experiment_service.compare(configs)
    except ComparisonMismatchError as e:
        raise HTTPException(status_code=status.HTTP_409_CONFLICT, detail=str(e))
    except LabError as e:
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(e))
    return report
