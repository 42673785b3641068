"""Semantic-weighted LiDAR ICP odometry with submap loop closure."""

from .config import PipelineConfig
from .core import (
    SE2,
    ConfigError,
    FormatError,
    LabeledPoint,
    LogSingularityError,
    Pose3,
    Scan,
    SemanticConfig,
    SemslamError,
    Twist6,
    UsageError,
    compose,
    inverse,
    se3_exp,
    se3_log,
    transform_point,
)

__version__ = "0.1.0"

__all__ = [
    "SE2",
    "ConfigError",
    "FormatError",
    "LabeledPoint",
    "LogSingularityError",
    "PipelineConfig",
    "Pose3",
    "Scan",
    "SemanticConfig",
    "SemslamError",
    "Twist6",
    "UsageError",
    "compose",
    "inverse",
    "se3_exp",
    "se3_log",
    "transform_point",
]
