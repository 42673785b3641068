"""Pipeline configuration: one flat ``key = value`` file, every key optional."""

from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from .core import ConfigError, SemanticConfig

THREADS_ENV = "SEMSLAM_THREADS"


def _labels(text: str) -> frozenset[int]:
    text = text.strip()
    if not text:
        return frozenset()
    return frozenset(int(t) for t in text.replace(" ", "").split(","))


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(text)


@dataclass(frozen=True)
class PipelineConfig:
    # preprocessing
    voxel_size: float = 1.0
    max_points_per_voxel: int = 20
    alpha: float = 1.5
    min_range: float = 0.0
    max_range: float = 100.0
    deskew: bool = True
    # registration
    semantic: bool = True
    initial_threshold: float = 2.0
    min_motion: float = 0.1
    max_icp_iterations: int = 500
    icp_convergence: float = 1e-4
    # local map
    map_max_points_per_voxel: int = 20
    map_max_range: float = 100.0
    # submaps
    submap_scans: int = 20
    submap_resolution: float = 0.1
    submap_height_above: float = 1.0
    submap_height_below: float = 3.0
    submap_max_range: float = 100.0
    # loop closure
    loop_search_radius: float = 50.0
    loop_window_x: float = 7.0
    loop_window_y: float = 7.0
    loop_window_theta_deg: float = 30.0
    loop_min_score: float = 0.55
    loop_adjacency: int = 40
    loop_node_stride: int = 5
    loop_apply_interval: int = 10
    loop_weight_translation: float = 1.0
    loop_weight_rotation: float = 10.0
    odometry_weight_factor: float = 10.0
    pyramid_cache: int = 4
    # semantics
    dynamic_labels: frozenset[int] = frozenset(range(252, 260))
    critical_labels: frozenset[int] = frozenset({80, 81})
    kappa_neutral: float = 1.0
    confidence_min: float = 0.05
    confidence_max: float = 0.95
    # test hooks: constant per-scan bias composed onto the output odometry
    drift_x: float = 0.0
    drift_y: float = 0.0
    drift_yaw: float = 0.0
    # outputs
    export_map: bool = False
    export_voxel: float = 0.05
    export_submaps: bool = True
    threads: int = 0  # 0: use SEMSLAM_THREADS or the CPU count

    semantic_config: SemanticConfig = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.validate()
        try:
            sc = SemanticConfig(
                dynamic_labels=self.dynamic_labels,
                critical_labels=self.critical_labels,
                kappa_neutral=self.kappa_neutral,
                confidence_clamp=(self.confidence_min, self.confidence_max),
            )
        except ConfigError as e:
            key = "critical_labels" if "dynamic and critical" in str(e) else (
                "kappa_neutral" if "kappa" in str(e) else "confidence_min"
            )
            raise ConfigError(f"{key}: {e}") from None
        object.__setattr__(self, "semantic_config", sc)

    def validate(self) -> None:
        positive = [
            "voxel_size", "alpha", "max_range", "initial_threshold", "icp_convergence", "map_max_range",
            "submap_resolution", "submap_max_range", "loop_search_radius", "loop_weight_translation",
            "loop_weight_rotation", "odometry_weight_factor", "export_voxel",
        ]
        for k in positive:
            v = getattr(self, k)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ConfigError(f"{k}: must be a positive number, got {v!r}")
        at_least_one = [
            "max_points_per_voxel", "max_icp_iterations", "map_max_points_per_voxel", "submap_scans",
            "loop_node_stride", "loop_apply_interval", "pyramid_cache",
        ]
        for k in at_least_one:
            if getattr(self, k) < 1:
                raise ConfigError(f"{k}: must be >= 1, got {getattr(self, k)!r}")
        for k in ("min_range", "min_motion", "submap_height_above", "submap_height_below", "loop_window_x",
                  "loop_window_y", "loop_window_theta_deg", "loop_adjacency", "threads"):
            if getattr(self, k) < 0:
                raise ConfigError(f"{k}: must be >= 0, got {getattr(self, k)!r}")
        if self.min_range >= self.max_range:
            raise ConfigError(f"min_range: must be below max_range ({self.min_range} >= {self.max_range})")
        if not 0.0 <= self.loop_min_score <= 1.0:
            raise ConfigError(f"loop_min_score: must lie in [0, 1], got {self.loop_min_score}")
        if self.loop_window_theta_deg > 180.0:
            raise ConfigError(f"loop_window_theta_deg: must be <= 180, got {self.loop_window_theta_deg}")
        if self.submap_scans < 2:
            raise ConfigError(f"submap_scans: must be >= 2, got {self.submap_scans}")

    # ------------------------------------------------------------------ derived

    @property
    def loop_window(self) -> tuple[float, float, float]:
        return (self.loop_window_x, self.loop_window_y, math.radians(self.loop_window_theta_deg))

    @property
    def loop_weights(self) -> tuple[float, float]:
        return (self.loop_weight_translation, self.loop_weight_rotation)

    @property
    def odometry_weights(self) -> tuple[float, float]:
        f = self.odometry_weight_factor
        return (f * self.loop_weight_translation, f * self.loop_weight_rotation)

    def worker_count(self) -> int:
        n = self.threads or os.cpu_count() or 1
        env = os.environ.get(THREADS_ENV)
        if env:
            try:
                cap = int(env)
            except ValueError:
                raise ConfigError(f"{THREADS_ENV}: expected an integer, got {env!r}") from None
            if cap < 1:
                raise ConfigError(f"{THREADS_ENV}: must be >= 1, got {cap}")
            n = min(n, cap)
        return max(1, n)

    def replace(self, **kw) -> "PipelineConfig":
        return dataclasses.replace(self, **kw)

    # ------------------------------------------------------------------ io

    @classmethod
    def from_mapping(cls, values: dict[str, str]) -> "PipelineConfig":
        types = {f.name: f for f in fields(cls) if f.init}
        kw = {}
        for key, raw in values.items():
            if key not in types:
                raise ConfigError(f"{key}: unknown configuration key")
            default = types[key].default
            try:
                if isinstance(default, bool):
                    kw[key] = _bool(raw)
                elif isinstance(default, frozenset):
                    kw[key] = _labels(raw)
                elif isinstance(default, int):
                    kw[key] = int(raw)
                else:
                    kw[key] = float(raw)
            except ValueError:
                raise ConfigError(f"{key}: cannot parse {raw!r}") from None
        return cls(**kw)

    @classmethod
    def parse(cls, text: str, overrides: dict[str, str] | None = None) -> "PipelineConfig":
        """Parse ``key = value`` lines; ``overrides`` win over the file."""
        values = {}
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {n}: expected key=value, got {raw.strip()!r}")
            k, v = (s.strip() for s in line.split("=", 1))
            if k in values:
                raise ConfigError(f"{k}: duplicate key on line {n}")
            values[k] = v
        values.update(overrides or {})
        return cls.from_mapping(values)

    @classmethod
    def load(cls, path: str | os.PathLike | None, overrides: dict[str, str] | None = None) -> "PipelineConfig":
        text = ""
        if path is not None:
            try:
                text = Path(path).read_text()
            except OSError as e:
                raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
        return cls.parse(text, overrides)

    def to_text(self) -> str:
        out = []
        for f in fields(self):
            if not f.init:
                continue
            v = getattr(self, f.name)
            if isinstance(v, frozenset):
                v = ",".join(str(x) for x in sorted(v))
            elif isinstance(v, bool):
                v = "true" if v else "false"
            out.append(f"{f.name} = {v}")
        return "\n".join(out) + "\n"
