"""FastAPI routes; paths in requests are resolved on the server."""

from __future__ import annotations

from fastapi import FastAPI, HTTPException
from fastapi.concurrency import run_in_threadpool

from .. import __version__
from ..core import SemslamError
from . import operations
from .schemas import (
    EvalRequest,
    EvalResponse,
    FilterMapRequest,
    FilterMapResponse,
    RunRequest,
    RunResponse,
    SimgenRequest,
    SimgenResponse,
)

app = FastAPI(title="semslam", version=__version__)


async def _call(fn, req):
    try:
        return await run_in_threadpool(fn, req)
    except FileNotFoundError as e:
        raise HTTPException(404, f"not found: {e.filename or e}") from None
    except (SemslamError, ValueError) as e:
        raise HTTPException(422, str(e)) from None


@app.get("/health")
async def health() -> dict[str, str]:
    return {"status": "ok", "version": __version__}


@app.post("/run", response_model=RunResponse)
async def run(req: RunRequest):
    return await _call(operations.run_job, req)


@app.post("/eval", response_model=EvalResponse)
async def evaluate(req: EvalRequest):
    return await _call(operations.eval_job, req)


@app.post("/filter-map", response_model=FilterMapResponse)
async def filter_map(req: FilterMapRequest):
    return await _call(operations.filter_map_job, req)


@app.post("/simgen", response_model=SimgenResponse)
async def simgen(req: SimgenRequest):
    return await _call(operations.simgen_job, req)
