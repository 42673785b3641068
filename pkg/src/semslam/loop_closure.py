"""Semantic branch-and-bound scan matching against finished submaps.

A scan point scores the hit fraction of its own label in the cell it lands
in; unlabeled points take the dominant label's fraction. The search space
is the usual discretization: integer cell shifts in x and y and an angular
step chosen so that the farthest point moves by about one cell.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import SE2, Pose3, with_planar
from .pose_graph import LOOP_WEIGHTS, Constraint, PoseGraph, optimize  # noqa: F401
from .submaps import HEIGHT_ABOVE, HEIGHT_BELOW, SemanticGrid, Submap, project_scan

DEFAULT_WINDOW = (7.0, 7.0, math.radians(30.0))
DEFAULT_MIN_SCORE = 0.55


@dataclass
class LayerStack:
    """Per-label hit-fraction layers, plus a zero and a dominant layer.

    The low side of both axes is padded by ``margin`` cells so max-pooled
    windows that start left of the grid still see its cells.

    Layer ``len(labels)`` is all zeros (labels the grid never saw) and layer
    ``len(labels) + 1`` holds the dominant-label fraction (unlabeled points).
    """

    labels: list[int]
    layers: np.ndarray  # (L + 2, W + m, H + m)
    origin: np.ndarray  # grid-frame position of unpadded cell (0, 0)
    resolution: float
    margin: int

    def cells(self, xy: np.ndarray) -> np.ndarray:
        """Padded-array indices of grid-frame points."""
        return np.floor((xy - self.origin) / self.resolution).astype(np.int64) + self.margin

    def layer_index(self, point_labels: np.ndarray) -> np.ndarray:
        lookup = {lab: i for i, lab in enumerate(self.labels)}
        zero, dom = len(self.labels), len(self.labels) + 1
        return np.array([dom if l == 0 else lookup.get(int(l), zero) for l in point_labels], dtype=np.int64)


def layer_stack(grid: SemanticGrid, margin: int = 0) -> LayerStack:
    labels, frac, dominant = grid.hit_fractions()
    w, h = grid.shape
    stack = np.zeros((len(labels) + 2, w + margin, h + margin))
    if w and h:
        stack[: len(labels), margin:, margin:] = frac
        stack[len(labels) + 1, margin:, margin:] = dominant
    return LayerStack(labels, stack, grid.origin.copy(), grid.resolution, margin)


def _gather(layers: np.ndarray, li: np.ndarray, cx: np.ndarray, cy: np.ndarray) -> np.ndarray:
    """``layers[li, cx, cy]`` with out-of-range cells reading as zero."""
    _, w, h = layers.shape
    ok = (cx >= 0) & (cx < w) & (cy >= 0) & (cy < h)
    out = layers[li, np.where(ok, cx, 0), np.where(ok, cy, 0)]
    return np.where(ok, out, 0.0)


def score(grid: SemanticGrid, points: np.ndarray, labels: np.ndarray, pose: SE2) -> float:
    """Mean per-point semantic hit fraction of the scan placed at ``pose`` in the grid frame."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(points) == 0:
        raise ValueError("scan_2d must not be empty")
    st = layer_stack(grid)
    li = st.layer_index(np.asarray(labels))
    c = st.cells(pose.transform(points))
    return float(_gather(st.layers, li, c[:, 0], c[:, 1]).sum() / len(points))


@dataclass
class MaxGridPyramid:
    """``levels[h][l, i, j]`` = max of layer ``l`` over cells ``[i, i + 2^h) x [j, j + 2^h)``."""

    stack: LayerStack
    levels: list[np.ndarray]

    @property
    def depth(self) -> int:
        return len(self.levels) - 1


def _shift_max(a: np.ndarray, step: int, axis: int) -> np.ndarray:
    out = a.copy()
    src = [slice(None)] * a.ndim
    dst = [slice(None)] * a.ndim
    src[axis] = slice(step, None)
    dst[axis] = slice(0, a.shape[axis] - step)
    np.maximum(out[tuple(dst)], a[tuple(src)], out=out[tuple(dst)])
    return out


def precompute_max_grids(grid: SemanticGrid, depth: int, margin: int | None = None) -> MaxGridPyramid:
    """Max-pooled pyramid; windows hanging off the grid count outside cells as zero."""
    if margin is None:
        margin = 1 << depth
    st = layer_stack(grid, margin)
    levels = [st.layers]
    for h in range(1, depth + 1):
        step = 1 << (h - 1)
        prev = levels[-1]
        levels.append(_shift_max(_shift_max(prev, step, 1), step, 2))
    return MaxGridPyramid(st, levels)


def angular_step(points: np.ndarray, resolution: float) -> float:
    d_max = float(np.max(np.linalg.norm(points, axis=1)))
    if d_max <= 0:
        return math.pi
    return math.acos(max(-1.0, 1.0 - resolution**2 / (2.0 * d_max**2)))


@dataclass
class _Problem:
    layers: list[np.ndarray]
    li: np.ndarray
    base_cells: np.ndarray  # (A, N, 2) cell of every rotated point before shifting
    angles: np.ndarray
    wx: int
    wy: int
    n: int


def _prepare(pyr: MaxGridPyramid, points: np.ndarray, labels: np.ndarray, initial: SE2, window) -> _Problem:
    st = pyr.stack
    res = st.resolution
    step = angular_step(points, res)
    n_ang = int(math.ceil(window[2] / step)) if window[2] > 0 else 0
    angles = initial.theta + step * np.arange(-n_ang, n_ang + 1)
    base = []
    for a in angles:
        q = SE2(initial.x, initial.y, float(a)).transform(points)
        base.append(st.cells(q))
    return _Problem(
        pyr.levels,
        st.layer_index(labels),
        np.stack(base),
        angles,
        int(math.ceil(window[0] / res - 1e-9)),
        int(math.ceil(window[1] / res - 1e-9)),
        len(points),
    )


def _scores(prob: _Problem, level: int, a: int, offsets: np.ndarray) -> np.ndarray:
    """Mean layer value for angle ``a`` shifted by each integer ``offsets[c] = (i, j)``."""
    cells = prob.base_cells[a]
    cx = cells[None, :, 0] + offsets[:, 0:1]
    cy = cells[None, :, 1] + offsets[:, 1:2]
    vals = _gather(prob.layers[level], prob.li[None, :], cx, cy)
    return vals.sum(axis=1) / prob.n


def _result(prob: _Problem, pyr: MaxGridPyramid, initial: SE2, a: int, i: int, j: int) -> SE2:
    res = pyr.stack.resolution
    return SE2(initial.x + i * res, initial.y + j * res, float(prob.angles[a]))


def exhaustive_match(
    submap: Submap | SemanticGrid, points, labels, initial: SE2, window=DEFAULT_WINDOW, min_score: float = 0.0,
    chunk: int = 4096,
):
    """Reference search over every discrete candidate; ties go to the smallest (angle, x, y) index."""
    grid = submap.grid if isinstance(submap, Submap) else submap
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    pyr = precompute_max_grids(grid, 0, margin=0)
    prob = _prepare(pyr, points, np.asarray(labels), initial, window)
    ii, jj = np.meshgrid(np.arange(-prob.wx, prob.wx + 1), np.arange(-prob.wy, prob.wy + 1), indexing="ij")
    offsets = np.c_[ii.ravel(), jj.ravel()]
    best = None
    for a in range(len(prob.angles)):
        for s in range(0, len(offsets), chunk):
            sc = _scores(prob, 0, a, offsets[s : s + chunk])
            k = int(np.argmax(sc))
            if best is None or sc[k] > best[0]:
                best = (float(sc[k]), a, *offsets[s + k].tolist())
    if best is None or best[0] < min_score:
        return None
    return _result(prob, pyr, initial, best[1], best[2], best[3]), best[0]


def search_depth(window, resolution: float, max_depth: int = 7) -> int:
    w = 2 * int(math.ceil(max(window[0], window[1]) / resolution - 1e-9)) + 1
    return min(max_depth, max(0, int(math.ceil(math.log2(w)))))


def branch_and_bound_match(
    submap: Submap | SemanticGrid,
    points,
    labels,
    initial: SE2,
    window=DEFAULT_WINDOW,
    min_score: float = DEFAULT_MIN_SCORE,
    depth: int | None = None,
    pyramid: MaxGridPyramid | None = None,
):
    """Exact best candidate of the discrete window, or ``None`` when it scores below ``min_score``.

    Returns ``(pose_in_grid_frame, score)``; identical to :func:`exhaustive_match`.
    """
    grid = submap.grid if isinstance(submap, Submap) else submap
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    labels = np.asarray(labels)
    if len(points) == 0:
        return None
    if depth is None:
        depth = search_depth(window, grid.resolution)
    if pyramid is None or pyramid.depth < depth:
        if isinstance(submap, Submap):
            pyramid = submap_pyramid(submap, depth)
        else:
            pyramid = precompute_max_grids(grid, depth)
    prob = _prepare(pyramid, points, labels, initial, window)

    top = depth
    size = 1 << top
    xs = np.arange(-prob.wx, prob.wx + 1, size)
    ys = np.arange(-prob.wy, prob.wy + 1, size)
    gi, gj = np.meshgrid(xs, ys, indexing="ij")
    top_offsets = np.c_[gi.ravel(), gj.ravel()]

    # candidates: (bound, angle, i, j); explored best-first within each level
    cands = []
    for a in range(len(prob.angles)):
        sc = _scores(prob, top, a, top_offsets)
        cands.extend(zip(sc.tolist(), [a] * len(sc), top_offsets[:, 0].tolist(), top_offsets[:, 1].tolist()))
    cands.sort(key=lambda c: (-c[0], c[1], c[2], c[3]))

    best = [min_score, None]  # score, (a, i, j)

    def visit(cands, level):
        for bound, a, i, j in cands:
            if bound < best[0]:
                break
            if level == 0:
                key = (a, i, j)
                if best[1] is None or bound > best[0] or key < best[1]:
                    best[0], best[1] = bound, key
                continue
            half = 1 << (level - 1)
            kids = [(i + di, j + dj) for di in (0, half) for dj in (0, half) if i + di <= prob.wx and j + dj <= prob.wy]
            offs = np.array(kids, dtype=np.int64)
            sc = _scores(prob, level - 1, a, offs)
            children = sorted(
                ((float(s), a, int(o[0]), int(o[1])) for s, o in zip(sc, offs)),
                key=lambda c: (-c[0], c[1], c[2], c[3]),
            )
            visit(children, level - 1)

    visit(cands, top)
    if best[1] is None:
        return None
    a, i, j = best[1]
    return _result(prob, pyramid, initial, a, i, j), float(best[0])


def submap_pyramid(submap: Submap, depth: int) -> MaxGridPyramid:
    """Pyramid of a finished submap, cached on the submap."""
    cached = submap._pyramids.get("pyramid")
    if cached is not None and cached.depth >= depth:
        return cached
    pyr = precompute_max_grids(submap.grid, depth)
    if submap.finished:
        submap._pyramids["pyramid"] = pyr
    return pyr


def release_pyramid(submap: Submap) -> None:
    submap._pyramids.clear()


# --------------------------------------------------------------------------
# constraint search
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LoopSearchConfig:
    search_radius: float = 50.0
    window: tuple[float, float, float] = DEFAULT_WINDOW
    min_score: float = DEFAULT_MIN_SCORE
    adjacency: int = 40  # nodes this close in sequence to a submap count as odometry-covered
    weights: tuple[float, float] = LOOP_WEIGHTS


@dataclass(frozen=True)
class LoopCandidate:
    submap_id: int
    node: int
    initial: SE2  # node guess in the submap frame


def scan_to_2d(scan, pose: Pose3, above: float = HEIGHT_ABOVE, below: float = HEIGHT_BELOW, max_range=None):
    """Points of ``scan`` in the gravity-aligned planar frame of its node (height band applied)."""
    tilt_only = with_planar(pose, SE2())
    _, pts, labels = project_scan(scan, tilt_only, Pose3.identity(), above, below, max_range)
    return pts, labels


def _submap_nodes(graph: PoseGraph, sid: int) -> range:
    rec = graph.submaps[sid]
    last = rec.anchor_node if rec.last_node is None else rec.last_node
    return range(rec.anchor_node, last + 1)


def loop_candidates(graph: PoseGraph, target, cfg: LoopSearchConfig = LoopSearchConfig()) -> list[LoopCandidate]:
    """Untried (submap, node) pairs in range and outside odometry adjacency.

    ``target`` is a node id (searched against every finished submap) or a
    :class:`Submap` (searched against every node with a stored 2D scan).
    """
    if isinstance(target, Submap):
        sids = [k for k, r in enumerate(graph.submaps) if r.submap is target]
        nodes = sorted(graph.scans_2d)
    else:
        sids = [k for k, r in enumerate(graph.submaps) if r.submap is not None and r.submap.finished]
        nodes = [int(target)] if int(target) in graph.scans_2d else []
    out = []
    for sid in sids:
        span = _submap_nodes(graph, sid)
        anchor = graph.submaps[sid].anchor_node
        positions = graph.poses[span.start : span.stop, :2]
        for n in nodes:
            if span.start - cfg.adjacency <= n <= span.stop - 1 + cfg.adjacency:
                continue
            if (sid, n) in graph.tried:
                continue
            d = float(np.min(np.linalg.norm(positions - graph.poses[n, :2], axis=1)))
            if d >= cfg.search_radius:
                continue
            out.append(LoopCandidate(sid, n, graph.node(anchor).inverse().compose(graph.node(n))))
    return out


def match_candidate(submap: Submap, scan_2d, cand: LoopCandidate, cfg: LoopSearchConfig = LoopSearchConfig()):
    """Pure worker body: BnB of one candidate; returns ``(pose, score)`` or ``None``."""
    pts, labels = scan_2d
    if len(pts) == 0:
        return None
    return branch_and_bound_match(submap, pts, labels, cand.initial, cfg.window, cfg.min_score)


def apply_match(graph: PoseGraph, cand: LoopCandidate, result, cfg: LoopSearchConfig = LoopSearchConfig()) -> bool:
    graph.tried.add((cand.submap_id, cand.node))
    if result is None:
        return False
    pose, s = result
    anchor = graph.submaps[cand.submap_id].anchor_node
    graph.add_constraint(Constraint("loop", anchor, cand.node, pose, tuple(cfg.weights), float(s)))
    return True


def add_loop_constraints(graph: PoseGraph, target, cfg: LoopSearchConfig = LoopSearchConfig()) -> int:
    """Search and add loop constraints for a new node or a newly finished submap; returns how many."""
    added = 0
    for cand in loop_candidates(graph, target, cfg):
        rec = graph.submaps[cand.submap_id]
        res = match_candidate(rec.submap, graph.scans_2d[cand.node], cand, cfg)
        added += apply_match(graph, cand, res, cfg)
    return added
