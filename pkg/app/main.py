from contextlib import asynccontextmanager

from fastapi import APIRouter, FastAPI
from fastapi.middleware.cors import CORSMiddleware
from dotenv import load_dotenv

# --------------------------
# Routers
# --------------------------
from app.routers import experiments, traces

# --------------------------
# Settings e Startup
# --------------------------
from app.core.config import settings
from app.core.logging import setup_logging
from app.protocols.base import protocol_names
from app.startup import ensure_output_dir

# Carrega variáveis do .env (OUTPUT_DIR, LOG_LEVEL, ...)
load_dotenv()


# ---------------------------------------------------------
# Lifespan: executa na inicialização/encerramento do app
# ---------------------------------------------------------
@asynccontextmanager
async def lifespan(app: FastAPI):
    # on_startup
    setup_logging()
    ensure_output_dir()
    yield


app = FastAPI(
    title="Consensus Lab",
    version="0.1.0",
    lifespan=lifespan,
)


# ---------------------------------------------------------
# CORS
# ---------------------------------------------------------
origins = settings.BACKEND_CORS_ORIGINS

app.add_middleware(
    CORSMiddleware,
    allow_origins=origins,
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


# ---------------------------------------------------------
# API principal prefixada (/api/v1)
# ---------------------------------------------------------
api = APIRouter(prefix="/api/v1")

api.include_router(experiments.router)   # /api/v1/experiments/*
api.include_router(traces.router)        # /api/v1/traces/*

app.include_router(api)


# ---------------------------------------------------------
# Healthcheck
# ---------------------------------------------------------
@app.get("/health")
def health():
    return {"status": "ok", "protocols": protocol_names(), "origins": origins}
