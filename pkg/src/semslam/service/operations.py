"""Job implementations behind both the HTTP routes and the in-process CLI."""

from __future__ import annotations

import dataclasses
from pathlib import Path

from ..config import PipelineConfig
from ..evaluation import ape, evaluate, write_ape_csv
from ..io_kitti import SequencePaths, read_trajectory
from ..map_post import filter_ply, labels_from_names
from ..pipeline import run_sequence, sequence_calibration, write_outputs
from ..simgen import (
    LoopPreset,
    loop_dataset,
    straight_dataset,
    write_kitti_sequence,
)
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


def run_job(req: RunRequest) -> RunResponse:
    cfg = PipelineConfig.load(req.config, req.overrides)
    paths = SequencePaths.from_sequence_dir(req.seq, req.labels)
    result = run_sequence(paths, cfg, req.mode)
    files = write_outputs(result, req.out, cfg, sequence_calibration(req.seq))
    return RunResponse(
        scans=len(result.trajectory),
        mode=req.mode,
        loop_closures=len(result.graph.loop_constraints()),
        first_loop_at=result.first_loop_at,
        degraded=result.degraded,
        files={k: str(v) for k, v in files.items()},
    )


def eval_job(req: EvalRequest) -> EvalResponse:
    est = read_trajectory(req.est)
    gt = read_trajectory(req.gt)
    if len(est) != len(gt):
        raise ValueError(f"trajectory length mismatch: {len(est)} estimated vs {len(gt)} ground-truth poses")
    metrics = evaluate(est, gt, req.metrics, req.align)
    if req.ape_csv:
        write_ape_csv(ape(est, gt, "3d", req.align), req.ape_csv)
    return EvalResponse(poses=len(est), aligned=req.align, metrics=metrics)


def filter_map_job(req: FilterMapRequest) -> FilterMapResponse:
    labels = labels_from_names(req.exclude)
    n = filter_ply(req.src, labels, req.dst)
    return FilterMapResponse(excluded_labels=sorted(labels), points=n)


def simgen_job(req: SimgenRequest) -> SimgenResponse:
    out = Path(req.out)
    if req.preset == "loop":
        preset = LoopPreset()
        changes = {}
        if req.seed is not None:
            changes["seed"] = req.seed
        if req.scans is not None:
            changes["scans_per_side"] = max(1, req.scans // 4)
        preset = dataclasses.replace(preset, **changes)
        _, truth, scans = loop_dataset(preset)
        overrides = preset.pipeline_overrides()
    else:
        _, truth, scans = straight_dataset(7 if req.seed is None else req.seed, req.scans or 40)
        overrides = {}
    write_kitti_sequence(out, scans, truth)
    cfg = out / "config.txt"
    cfg.write_text("".join(f"{k} = {v}\n" for k, v in overrides.items()))
    return SimgenResponse(scans=len(scans), out=str(out), config=str(cfg))
