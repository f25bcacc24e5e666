# app/routers/traces.py
from fastapi import APIRouter, HTTPException, Request, status

from app.core.errors import CorruptTraceError
from app.schemas.checker import CheckReport
from app.schemas.experiment import ReplayResult
from app.services import checker_service, experiment_service
from app.sim.trace import loads_trace

router = APIRouter(prefix="/traces", tags=["traces"])


async def _read_trace(request: Request):
    """Corpo NDJSON (uma linha por TraceEvent)."""
    text = (await request.body()).decode("utf-8", errors="replace")
    try:
        return loads_trace(text)
    except CorruptTraceError as e:
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(e))


@router.post("/replay", response_model=ReplayResult)
async def replay(request: Request):
    events = await _read_trace(request)
    return experiment_service.replay(events)


@router.post("/check", response_model=CheckReport)
async def check(request: Request):
    events = await _read_trace(request)
    return checker_service.check_trace(events)
