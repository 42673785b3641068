"""Semantic point-to-point ICP.

Each correspondence ``(s, q)`` found within the threshold ``tau`` is weighted by
the product of a Geman-McClure IRLS weight on its residual and the label
fitness ``kappa`` of the source/target labels, and the pose is refined with
Gauss-Newton steps on a left-multiplied twist.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Pose3, Scan, SemanticConfig, Twist6, se3_exp
from .local_map import SemanticVoxelMap

MAX_ITERATIONS = 500
CONVERGENCE = 1e-4


@dataclass
class RegistrationResult:
    pose: Pose3
    iterations: int
    final_correspondences: int
    converged: bool


def predict_motion(prev_relative: Pose3 | None) -> Pose3:
    """Constant-velocity model: the next inter-scan motion repeats the last one."""
    return Pose3.identity() if prev_relative is None else prev_relative


def kappa(y_s: int, y_q: int, p: float, cfg: SemanticConfig) -> float:
    p_min, p_max = cfg.confidence_clamp
    if y_s == 0 or y_q == 0:
        return cfg.kappa_neutral
    p = min(max(p, p_min), p_max)
    return p if y_s == y_q else 1.0 - p


def kappa_vec(y_s: np.ndarray, y_q: np.ndarray, p: np.ndarray, cfg: SemanticConfig) -> np.ndarray:
    p = np.clip(p, *cfg.confidence_clamp)
    k = np.where(y_s == y_q, p, 1.0 - p)
    return np.where((y_s == 0) | (y_q == 0), cfg.kappa_neutral, k)


def gm_weight(residual_norm, sigma: float):
    """Geman-McClure IRLS weight ``sigma^4 / (sigma^2 + r^2)^2`` (1 at r = 0)."""
    s2 = sigma * sigma
    r = np.asarray(residual_norm, dtype=float)
    w = (s2 / (s2 + r * r)) ** 2
    return float(w) if w.ndim == 0 else w


def gm_rho(residual_norm, sigma: float):
    """The Geman-McClure loss whose IRLS weight is :func:`gm_weight`."""
    r2 = np.asarray(residual_norm, dtype=float) ** 2
    return 0.5 * r2 / (1.0 + r2 / (sigma * sigma))


def point_jacobians(points_world: np.ndarray) -> np.ndarray:
    """d(exp(xi) p)/d(xi) at xi = 0 for xi = (omega, v): ``[-[p]_x, I]``, shape (N, 3, 6)."""
    n = len(points_world)
    J = np.zeros((n, 3, 6))
    x, y, z = points_world[:, 0], points_world[:, 1], points_world[:, 2]
    J[:, 0, 1], J[:, 0, 2] = z, -y
    J[:, 1, 0], J[:, 1, 2] = -z, x
    J[:, 2, 0], J[:, 2, 1] = y, -x
    J[:, 0, 3] = J[:, 1, 4] = J[:, 2, 5] = 1.0
    return J


def squared_residual_gradient(points_world: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Analytic gradient of ``sum ||exp(xi) p - q||^2`` w.r.t. the twist at xi = 0."""
    r = points_world - targets
    return 2.0 * np.einsum("nij,ni->j", point_jacobians(points_world), r)


def gauss_newton_step(points_world: np.ndarray, targets: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Solve the weighted normal equations for the twist update."""
    r = (points_world - targets).reshape(-1)
    J = point_jacobians(points_world).reshape(-1, 6)
    w = np.repeat(weights, 3)
    Jw = J * w[:, None]
    JtJ = Jw.T @ J
    Jtr = Jw.T @ r
    try:
        return np.linalg.solve(JtJ, -Jtr)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(JtJ, -Jtr, rcond=None)[0]


def correspondence_weights(
    residuals: np.ndarray,
    sigma: float,
    src_labels: np.ndarray,
    tgt_labels: np.ndarray,
    src_conf: np.ndarray,
    cfg: SemanticConfig,
    semantic: bool = True,
) -> np.ndarray:
    w = gm_weight(residuals, sigma)
    if semantic:
        w = w * semantic_factor(src_labels, tgt_labels, src_conf, cfg)
    return w


def semantic_factor(y_s: np.ndarray, y_q: np.ndarray, p: np.ndarray, cfg: SemanticConfig) -> np.ndarray:
    """kappa rescaled so a fully confident match weighs exactly 1.

    IRLS steps are invariant to a global weight scale, so dividing labeled
    pairs by ``p_max`` changes nothing but makes the all-confident case equal
    the plain robust baseline bit for bit. Unlabeled pairs keep kappa_neutral.
    """
    k = kappa_vec(y_s, y_q, p, cfg)
    unlabeled = (y_s == 0) | (y_q == 0)
    return np.where(unlabeled, k, k / cfg.confidence_clamp[1])


def register_scan(
    source: Scan,
    local_map: SemanticVoxelMap,
    initial: Pose3,
    tau: float,
    cfg: SemanticConfig | None = None,
    semantic: bool = True,
    max_iterations: int = MAX_ITERATIONS,
    convergence: float = CONVERGENCE,
    trace: list | None = None,
) -> RegistrationResult:
    """Align ``source`` (sensor frame) to ``local_map``; returns the world-from-sensor pose.

    ``semantic=False`` forces kappa to 1, which is the plain robust ICP
    baseline. If ``trace`` is a list, per-iteration weight vectors are
    appended to it.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    cfg = cfg or SemanticConfig()
    sigma = tau / 3.0
    pts = source.positions
    correction = Pose3.identity()
    n_corr = 0
    for it in range(1, max_iterations + 1):
        current = correction.compose(initial)
        world = current.transform(pts)
        idx, dist = local_map.nearest(world, tau)
        valid = idx >= 0
        n_corr = int(valid.sum())
        if n_corr == 0:
            return RegistrationResult(initial, it, 0, False)
        w = correspondence_weights(
            dist[valid],
            sigma,
            source.labels[valid],
            local_map.labels[idx[valid]],
            source.confidences[valid],
            cfg,
            semantic,
        )
        if trace is not None:
            trace.append(w)
        dx = gauss_newton_step(world[valid], local_map.positions[idx[valid]], w)
        correction = se3_exp(Twist6.from_vector(dx)).compose(correction)
        if np.linalg.norm(dx) < convergence:
            return RegistrationResult(correction.compose(initial), it, n_corr, True)
    return RegistrationResult(correction.compose(initial), max_iterations, n_corr, False)


def irls_fixed_correspondences(
    source_points: np.ndarray,
    targets: np.ndarray,
    kappas: np.ndarray,
    sigma: float,
    initial: Pose3,
    iterations: int,
) -> tuple[Pose3, list[float]]:
    """IRLS on frozen correspondences; returns the pose and the objective per iterate."""
    pose = initial
    history = []
    for _ in range(iterations):
        world = pose.transform(source_points)
        r = np.linalg.norm(world - targets, axis=1)
        history.append(float(np.sum(kappas * gm_rho(r, sigma))))
        w = gm_weight(r, sigma) * kappas
        dx = gauss_newton_step(world, targets, w)
        pose = se3_exp(Twist6.from_vector(dx)).compose(pose)
    r = np.linalg.norm(pose.transform(source_points) - targets, axis=1)
    history.append(float(np.sum(kappas * gm_rho(r, sigma))))
    return pose, history


@dataclass
class AdaptiveThreshold:
    """Running RMS of model deviation; the correspondence threshold is three times it."""

    initial_threshold: float = 2.0
    min_motion: float = 0.1
    max_range: float = 100.0
    sigma_sq_accum: float = 0.0
    sample_count: int = 0

    @property
    def tau(self) -> float:
        if self.sample_count == 0:
            return self.initial_threshold
        return 3.0 * math.sqrt(self.sigma_sq_accum / self.sample_count)

    def model_deviation(self, predicted: Pose3, computed: Pose3) -> float:
        d = predicted.inverse().compose(computed)
        theta = d.angle()
        return float(np.linalg.norm(d.translation)) + 2.0 * self.max_range * math.sin(0.5 * theta)

    def update(self, predicted: Pose3, computed: Pose3) -> float:
        delta = self.model_deviation(predicted, computed)
        if delta > self.min_motion:
            self.sigma_sq_accum += delta * delta
            self.sample_count += 1
        return self.tau


def update_threshold(at: AdaptiveThreshold, predicted: Pose3, computed: Pose3) -> float:
    return at.update(predicted, computed)
