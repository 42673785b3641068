"""SE2 pose graph over scan nodes with odometry and loop constraints.

Submaps are rigidly attached to the node that started them, so the only
unknowns are node poses. z, roll and pitch ride along from odometry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import spsolve

from .core import SE2, FormatError, Pose3, SemslamError, with_planar, wrap_angle

LOOP_WEIGHTS = (1.0, 10.0)
ODOMETRY_WEIGHTS = (10.0, 100.0)
MAX_ITERATIONS = 200
GRADIENT_TOLERANCE = 1e-8
FORMAT_VERSION = 1


class DisconnectedGraphError(SemslamError):
    pass


@dataclass(frozen=True)
class Constraint:
    kind: str  # "odometry" | "loop"
    from_node: int
    to_node: int
    relative_pose: SE2
    weight: tuple[float, float]
    score: float | None = None


@dataclass
class SubmapRecord:
    anchor_node: int
    submap: object | None = None  # the Submap, when kept in memory
    last_node: int | None = None


def se2_log(x: np.ndarray, y: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Vectorized SE2 logarithm, returns (N, 3) tangent vectors (v_x, v_y, phi)."""
    phi = wrap_angle(phi)
    a = _half_cot(phi)
    b = 0.5 * phi
    return np.stack([a * x + b * y, -b * x + a * y, phi], axis=1)


def _half_cot(phi):
    """``(phi / 2) cot(phi / 2)``, 1 at 0."""
    phi = np.asarray(phi, dtype=float)
    small = np.abs(phi) < 1e-4
    safe = np.where(small, 1.0, phi)
    full = 0.5 * safe / np.tan(0.5 * safe)
    return np.where(small, 1.0 - phi * phi / 12.0, full)


def _half_cot_derivative(phi):
    phi = np.asarray(phi, dtype=float)
    small = np.abs(phi) < 1e-4
    safe = np.where(small, 1.0, phi)
    s = np.sin(0.5 * safe)
    full = 0.5 / np.tan(0.5 * safe) - 0.25 * safe / (s * s)
    return np.where(small, -phi / 6.0, full)


class PoseGraph:
    def __init__(self):
        self.poses = np.zeros((0, 3))  # current SE2 estimates, one row per node
        self.side: list[Pose3] = []  # odometry Pose3 per node, supplies z/roll/pitch
        self.constraints: list[Constraint] = []
        self.submaps: list[SubmapRecord] = []
        self.scans_2d: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        self.tried: set[tuple[int, int]] = set()

    def __len__(self) -> int:
        return len(self.side)

    # -------------------------------------------------------------- building

    def add_node(self, pose: Pose3, estimate: SE2 | None = None) -> int:
        est = estimate if estimate is not None else SE2.from_pose3(pose)
        self.poses = np.vstack([self.poses, est.as_array()[None]])
        self.side.append(pose)
        return len(self.side) - 1

    def add_submap(self, anchor_node: int, submap=None, last_node: int | None = None) -> int:
        if not 0 <= anchor_node < len(self):
            raise IndexError(f"unknown node {anchor_node}")
        self.submaps.append(SubmapRecord(anchor_node, submap, last_node))
        return len(self.submaps) - 1

    def add_constraint(self, c: Constraint) -> None:
        n = len(self)
        if not (0 <= c.from_node < n and 0 <= c.to_node < n):
            raise IndexError(f"constraint references unknown node ({c.from_node}, {c.to_node})")
        self.constraints.append(c)

    def add_odometry(self, from_node: int, to_node: int, relative: SE2, weight=ODOMETRY_WEIGHTS) -> None:
        self.add_constraint(Constraint("odometry", from_node, to_node, relative, tuple(weight)))

    def loop_constraints(self) -> list[Constraint]:
        return [c for c in self.constraints if c.kind == "loop"]

    # -------------------------------------------------------------- queries

    def node(self, i: int) -> SE2:
        return SE2(*map(float, self.poses[i]))

    def node_pose3(self, i: int) -> Pose3:
        return with_planar(self.side[i], self.node(i))

    def trajectory(self) -> list[Pose3]:
        return [self.node_pose3(i) for i in range(len(self))]

    @property
    def submap_poses(self) -> list[SE2]:
        return [self.node(r.anchor_node) for r in self.submaps]

    def is_connected(self) -> bool:
        n = len(self)
        if n <= 1:
            return True
        odo = [c for c in self.constraints if c.kind == "odometry"]
        rows = [c.from_node for c in odo]
        cols = [c.to_node for c in odo]
        adj = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        return connected_components(adj, directed=False)[0] == 1

    # -------------------------------------------------------------- objective

    def _arrays(self):
        cs = self.constraints
        i = np.array([c.from_node for c in cs], dtype=np.int64)
        j = np.array([c.to_node for c in cs], dtype=np.int64)
        z = np.array([c.relative_pose.as_array() for c in cs]).reshape(-1, 3)
        w = np.array([(c.weight[0], c.weight[0], c.weight[1]) for c in cs]).reshape(-1, 3)
        return i, j, z, w

    def residuals(self, poses: np.ndarray | None = None, with_jacobian: bool = False):
        """Weighted residuals ``w * se2_log(z^-1 (x_i^-1 x_j))`` stacked (3 per constraint)."""
        x = self.poses if poses is None else poses
        i, j, z, w = self._arrays()
        if len(i) == 0:
            return (np.zeros(0), sp.csr_matrix((0, 3 * len(x)))) if with_jacobian else np.zeros(0)
        ti, tj = x[i, :2], x[j, :2]
        d = tj - ti
        ci, si = np.cos(x[i, 2]), np.sin(x[i, 2])
        cz, sz = np.cos(z[:, 2]), np.sin(z[:, 2])
        # local = Ri^T d, then e_t = Rz^T (local - tz)
        lx = ci * d[:, 0] + si * d[:, 1]
        ly = -si * d[:, 0] + ci * d[:, 1]
        ux, uy = lx - z[:, 0], ly - z[:, 1]
        ex = cz * ux + sz * uy
        ey = -sz * ux + cz * uy
        phi = wrap_angle(x[j, 2] - x[i, 2] - z[:, 2])
        r = se2_log(ex, ey, phi) * w
        if not with_jacobian:
            return r.ravel()

        m = len(i)
        a = _half_cot(phi)
        da = _half_cot_derivative(phi)
        b = 0.5 * phi
        # d(e_t)/d(t_j) = Rz^T Ri^T
        A = np.empty((m, 2, 2))
        A[:, 0, 0] = cz * ci - sz * si
        A[:, 0, 1] = cz * si + sz * ci
        A[:, 1, 0] = -sz * ci - cz * si
        A[:, 1, 1] = -sz * si + cz * ci
        # d(e_t)/d(theta_i) = Rz^T * (d Ri^T / d theta) d = Rz^T (ly, -lx)
        dex_dth = cz * ly + sz * (-lx)
        dey_dth = -sz * ly + cz * (-lx)
        # tangent v = [[a, b], [-b, a]] e_t
        V = np.empty((m, 2, 2))
        V[:, 0, 0], V[:, 0, 1], V[:, 1, 0], V[:, 1, 1] = a, b, -b, a
        dv_dphi = np.stack([da * ex + 0.5 * ey, -0.5 * ex + da * ey], axis=1)

        Jt_j = np.einsum("mab,mbc->mac", V, A)  # dv/dt_j
        Jt_i = -Jt_j
        dv_dthi = np.einsum("mab,mb->ma", V, np.stack([dex_dth, dey_dth], axis=1)) - dv_dphi
        dv_dthj = dv_dphi

        blocks_i = np.zeros((m, 3, 3))
        blocks_j = np.zeros((m, 3, 3))
        blocks_i[:, :2, :2] = Jt_i
        blocks_i[:, :2, 2] = dv_dthi
        blocks_i[:, 2, 2] = -1.0
        blocks_j[:, :2, :2] = Jt_j
        blocks_j[:, :2, 2] = dv_dthj
        blocks_j[:, 2, 2] = 1.0
        blocks_i *= w[:, :, None]
        blocks_j *= w[:, :, None]

        rows = np.repeat(3 * np.arange(m)[:, None] + np.arange(3)[None], 3, axis=1).reshape(m, 3, 3)
        cols_i = (3 * i)[:, None, None] + np.arange(3)[None, None, :]
        cols_j = (3 * j)[:, None, None] + np.arange(3)[None, None, :]
        cols_i = np.broadcast_to(cols_i, (m, 3, 3))
        cols_j = np.broadcast_to(cols_j, (m, 3, 3))
        J = sp.coo_matrix(
            (np.r_[blocks_i.ravel(), blocks_j.ravel()], (np.r_[rows.ravel(), rows.ravel()], np.r_[cols_i.ravel(), cols_j.ravel()])),
            shape=(3 * m, 3 * len(x)),
        ).tocsr()
        return r.ravel(), J

    def cost(self, poses: np.ndarray | None = None) -> float:
        r = self.residuals(poses)
        return float(r @ r)

    # -------------------------------------------------------------- solve

    def optimize(self, max_iterations: int = MAX_ITERATIONS, gradient_tolerance: float = GRADIENT_TOLERANCE) -> dict:
        """Levenberg-Marquardt with node 0 held fixed; updates ``self.poses`` in place."""
        n = len(self)
        if n == 0:
            return {"iterations": 0, "cost": 0.0, "gradient_norm": 0.0}
        if not self.is_connected():
            raise DisconnectedGraphError("pose graph is not connected by odometry constraints")
        x = self.poses.copy()
        r, J = self.residuals(x, with_jacobian=True)
        cost = float(r @ r)
        lam = 1e-4
        it = 0
        grad_norm = 0.0
        for it in range(1, max_iterations + 1):
            Jf = J[:, 3:]
            g = Jf.T @ r
            grad_norm = float(np.linalg.norm(g))
            if grad_norm < gradient_tolerance or n == 1:
                break
            H = (Jf.T @ Jf).tocsc()
            diag = H.diagonal()
            improved = False
            while lam < 1e16:
                A = H + sp.diags(lam * np.maximum(diag, 1e-12), format="csc")
                step = spsolve(A, -g)
                cand = x.copy()
                cand[1:] += step.reshape(-1, 3)
                r_new = self.residuals(cand)
                c_new = float(r_new @ r_new)
                if c_new <= cost:
                    x, cost = cand, c_new
                    lam = max(lam * 0.1, 1e-12)
                    improved = True
                    break
                lam *= 10.0
            if not improved:
                break
            r, J = self.residuals(x, with_jacobian=True)
        x[:, 2] = wrap_angle(x[:, 2])
        self.poses = x
        return {"iterations": it, "cost": cost, "gradient_norm": grad_norm}

    # -------------------------------------------------------------- text format

    def to_text(self) -> str:
        lines = [f"# semslam pose graph v{FORMAT_VERSION}"]
        for k in range(len(self)):
            p = self.side[k]
            q = p.quat
            lines.append(
                "NODE %d %.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g"
                % (k, *self.poses[k], *p.translation, *q)
            )
        for k, rec in enumerate(self.submaps):
            last = "-" if rec.last_node is None else rec.last_node
            lines.append(f"SUBMAP {k} {rec.anchor_node} {last}")
        for c in self.constraints:
            rp = c.relative_pose
            score = "-" if c.score is None else "%.17g" % c.score
            lines.append(
                "CONSTRAINT %s %d %d %.17g %.17g %.17g %.17g %.17g %s"
                % (c.kind, c.from_node, c.to_node, rp.x, rp.y, rp.theta, c.weight[0], c.weight[1], score)
            )
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "PoseGraph":
        g = cls()
        header_seen = False
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                if "pose graph v" in line:
                    version = int(line.rsplit("v", 1)[1])
                    if version != FORMAT_VERSION:
                        raise FormatError(f"unsupported pose graph version {version}")
                    header_seen = True
                continue
            tok = line.split()
            try:
                if tok[0] == "NODE" and len(tok) == 12:
                    vals = [float(t) for t in tok[2:]]
                    pose = Pose3(np.array(vals[6:10]), vals[3:6])
                    if int(tok[1]) != len(g):
                        raise ValueError
                    g.add_node(pose, SE2(*vals[:3]))
                elif tok[0] == "SUBMAP" and len(tok) == 4:
                    g.add_submap(int(tok[2]), None, None if tok[3] == "-" else int(tok[3]))
                elif tok[0] == "CONSTRAINT" and len(tok) == 10:
                    score = None if tok[9] == "-" else float(tok[9])
                    g.add_constraint(
                        Constraint(
                            tok[1], int(tok[2]), int(tok[3]), SE2(*map(float, tok[4:7])),
                            (float(tok[7]), float(tok[8])), score,
                        )
                    )
                else:
                    raise ValueError
            except (ValueError, IndexError):
                raise FormatError(f"malformed pose graph line {n}") from None
        if not header_seen and len(g):
            raise FormatError("missing pose graph header")
        return g

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path) -> "PoseGraph":
        return cls.from_text(Path(path).read_text())


def optimize(graph: PoseGraph, **kw) -> dict:
    return graph.optimize(**kw)


def relative_se2(a: SE2, b: SE2) -> SE2:
    return a.inverse().compose(b)


def planar_distance(a: SE2, b: SE2) -> float:
    return math.hypot(a.x - b.x, a.y - b.y)
