"""HTTP service wrapping the pipeline; the CLI calls the same operations in-process."""

from .operations import eval_job, filter_map_job, run_job, simgen_job
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

__all__ = [
    "EvalRequest",
    "EvalResponse",
    "FilterMapRequest",
    "FilterMapResponse",
    "RunRequest",
    "RunResponse",
    "SimgenRequest",
    "SimgenResponse",
    "eval_job",
    "filter_map_job",
    "run_job",
    "simgen_job",
]
