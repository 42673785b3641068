"""Request and response models shared by the HTTP service and the CLI."""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, Field, field_validator

METRICS = ("ate2d", "ate3d", "rte")


class RunRequest(BaseModel):
    mode: Literal["odometry", "slam"] = "odometry"
    seq: str
    labels: str | None = None
    config: str | None = Field(None, description="path to a key=value config file")
    overrides: dict[str, str] = Field(default_factory=dict)
    out: str


class RunResponse(BaseModel):
    scans: int
    mode: str
    loop_closures: int
    first_loop_at: int | None
    degraded: list[int]
    files: dict[str, str]


class EvalRequest(BaseModel):
    est: str
    gt: str
    metrics: list[str] = Field(default_factory=lambda: list(METRICS))
    align: bool = False
    ape_csv: str | None = None

    @field_validator("metrics")
    @classmethod
    def _known(cls, v: list[str]) -> list[str]:
        bad = [m for m in v if m not in METRICS]
        if bad:
            raise ValueError(f"unknown metric(s): {', '.join(bad)}")
        if not v:
            raise ValueError("no metrics requested")
        return v


class EvalResponse(BaseModel):
    poses: int
    aligned: bool
    metrics: dict[str, float]


class FilterMapRequest(BaseModel):
    src: str
    exclude: list[str]
    dst: str


class FilterMapResponse(BaseModel):
    excluded_labels: list[int]
    points: int


class SimgenRequest(BaseModel):
    preset: Literal["loop", "straight"] = "loop"
    out: str
    seed: int | None = None
    scans: int | None = Field(None, ge=2)


class SimgenResponse(BaseModel):
    scans: int
    out: str
    config: str
