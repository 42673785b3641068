"""2D semantic occupancy submaps built by ray casting labeled points."""

from __future__ import annotations

import io
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import SE2, Pose3, Scan, UsageError, FormatError, with_planar

DEFAULT_RESOLUTION = 0.1
HEIGHT_ABOVE = 1.0
HEIGHT_BELOW = 3.0
_GROW_PAD = 32


def bresenham(x0: int, y0: int, x1: int, y1: int) -> list[tuple[int, int]]:
    """Cells from (x0, y0) to (x1, y1) inclusive, one per step of the major axis."""
    dx, dy = x1 - x0, y1 - y0
    n = max(abs(dx), abs(dy))
    if n == 0:
        return [(x0, y0)]
    k = np.arange(n + 1)
    xs, ys = _line_cells(np.array([x0]), np.array([y0]), np.array([dx]), np.array([dy]), np.array([n]), k, np.zeros(n + 1, int))
    return list(zip(xs.tolist(), ys.tolist()))


def _round_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    """``round(num / den)`` for den > 0 with halves rounded away from zero, in integers."""
    q = (2 * np.abs(num) + den) // (2 * den)
    return np.sign(num) * q


def _line_cells(x0, y0, dx, dy, n, k, ray):
    """Cell coordinates at step ``k`` of ray ``ray`` (arrays indexed per cell)."""
    nk = n[ray]
    xs = x0[ray] + _round_div(k * dx[ray], nk)
    ys = y0[ray] + _round_div(k * dy[ray], nk)
    return xs, ys


@dataclass
class Cell:
    hits: dict[int, int]
    misses: int

    @property
    def total_hits(self) -> int:
        return sum(self.hits.values())


def dominant_label(cell: Cell) -> tuple[int, float]:
    """Most-hit label of a cell (ties to the smaller id) and its share of all observations."""
    if not cell.hits or cell.total_hits == 0:
        return 0, 0.0
    label = min(cell.hits, key=lambda l: (-cell.hits[l], l))
    return label, cell.hits[label] / (cell.total_hits + cell.misses)


class SemanticGrid:
    """Multi-layer occupancy grid: one hit-count layer per label plus a shared miss layer.

    Cell ``(i, j)`` covers ``origin + [i, i+1) * resolution`` by ``[j, j+1) * resolution``
    in the grid frame; ``local_pose`` places the grid frame in the world.
    """

    def __init__(self, resolution: float = DEFAULT_RESOLUTION, local_pose: Pose3 | None = None):
        if resolution <= 0:
            raise ValueError("resolution must be positive")
        self.resolution = float(resolution)
        self.local_pose = local_pose or Pose3.identity()
        self.origin = np.zeros(2)
        self.layer_labels: list[int] = []
        self.hits = np.zeros((0, 0, 0), dtype=np.int32)
        self.misses = np.zeros((0, 0), dtype=np.int32)

    @property
    def shape(self) -> tuple[int, int]:
        return self.misses.shape

    def _layer(self, label: int) -> int:
        if label not in self.layer_labels:
            self.layer_labels.append(int(label))
            self.hits = np.concatenate([self.hits, np.zeros((1, *self.shape), np.int32)])
        return self.layer_labels.index(label)

    def cell_index(self, xy: np.ndarray) -> np.ndarray:
        xy = np.asarray(xy, dtype=float)
        return np.floor((xy - self.origin) / self.resolution).astype(np.int64)

    def _ensure(self, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        """Grow so that cell indices in [lo, hi] exist; returns the index shift applied."""
        w, h = self.shape
        if w and lo[0] >= 0 and lo[1] >= 0 and hi[0] < w and hi[1] < h:
            return np.zeros(2, np.int64)
        if w == 0:
            new_lo, new_hi = lo - _GROW_PAD, hi + _GROW_PAD
        else:
            new_lo = np.minimum(lo - _GROW_PAD * (lo < 0), 0)
            new_hi = np.maximum(hi + _GROW_PAD * (hi >= (w, h)), (w - 1, h - 1))
        nw, nh = (new_hi - new_lo + 1).tolist()
        hits = np.zeros((len(self.layer_labels), nw, nh), np.int32)
        misses = np.zeros((nw, nh), np.int32)
        if w:
            ox, oy = (-new_lo).tolist()
            hits[:, ox : ox + w, oy : oy + h] = self.hits
            misses[ox : ox + w, oy : oy + h] = self.misses
        self.hits, self.misses = hits, misses
        self.origin = self.origin + new_lo * self.resolution
        return -new_lo

    def insert_rays(self, origin_2d, endpoints_2d: np.ndarray, labels: np.ndarray) -> None:
        """Ray-cast from one origin: +1 hit for each endpoint's label, +1 miss on every cell before it."""
        endpoints_2d = np.asarray(endpoints_2d, dtype=float).reshape(-1, 2)
        if len(endpoints_2d) == 0:
            return
        labels = np.asarray(labels, dtype=np.int64)
        o = self.cell_index(np.asarray(origin_2d, dtype=float).reshape(1, 2))[0]
        e = self.cell_index(endpoints_2d)
        lo = np.minimum(e.min(axis=0), o)
        hi = np.maximum(e.max(axis=0), o)
        shift = self._ensure(lo, hi)
        o, e = o + shift, e + shift
        for lab in np.unique(labels):
            self._layer(int(lab))

        d = e - o
        n = np.abs(d).max(axis=1)
        # misses: steps 0 .. n-1 of every ray
        ray = np.repeat(np.arange(len(e)), n)
        if len(ray):
            k = np.arange(len(ray)) - np.repeat(np.cumsum(n) - n, n)
            ox = np.full(len(e), o[0])
            oy = np.full(len(e), o[1])
            xs, ys = _line_cells(ox, oy, d[:, 0], d[:, 1], n, k, ray)
            w, h = self.shape
            self.misses += np.bincount(xs * h + ys, minlength=w * h).reshape(w, h).astype(np.int32)
        layer_of = {lab: i for i, lab in enumerate(self.layer_labels)}
        li = np.array([layer_of[int(l)] for l in labels])
        np.add.at(self.hits, (li, e[:, 0], e[:, 1]), 1)

    def insert_ray(self, origin_2d, endpoint_2d, label: int) -> None:
        self.insert_rays(origin_2d, np.asarray(endpoint_2d, dtype=float).reshape(1, 2), np.array([label]))

    def cell(self, i: int, j: int) -> Cell:
        w, h = self.shape
        if not (0 <= i < w and 0 <= j < h):
            return Cell({}, 0)
        hits = {lab: int(self.hits[k, i, j]) for k, lab in enumerate(self.layer_labels) if self.hits[k, i, j]}
        return Cell(hits, int(self.misses[i, j]))

    def cell_at(self, xy) -> Cell:
        i, j = self.cell_index(np.asarray(xy, dtype=float).reshape(1, 2))[0]
        return self.cell(int(i), int(j))

    def total_hits(self) -> int:
        return int(self.hits.sum())

    def occupied(self) -> np.ndarray:
        return self.hits.sum(axis=0) > 0

    def hit_fractions(self) -> tuple[list[int], np.ndarray, np.ndarray]:
        """Per-label ``hits / (total_hits + misses)`` layers and the dominant-label layer."""
        total = self.hits.sum(axis=0) + self.misses
        with np.errstate(invalid="ignore", divide="ignore"):
            frac = np.where(total > 0, self.hits / np.maximum(total, 1), 0.0)
        dominant = frac.max(axis=0) if len(self.layer_labels) else np.zeros(self.shape)
        return list(self.layer_labels), frac, dominant

    def dominant_labels(self) -> np.ndarray:
        """Dominant label per cell (0 where nothing was hit), ties to the smaller id."""
        if not self.layer_labels:
            return np.zeros(self.shape, np.uint16)
        order = np.argsort(self.layer_labels)
        labels = np.asarray(self.layer_labels)[order]
        best = np.argmax(self.hits[order], axis=0)
        out = labels[best].astype(np.uint16)
        out[self.hits.sum(axis=0) == 0] = 0
        return out


@dataclass
class Submap:
    grid: SemanticGrid
    scan_range: tuple[int, int] | None = None
    finished: bool = False
    anchor: SE2 = field(default_factory=SE2)
    _pyramids: dict = field(default_factory=dict, repr=False)

    @classmethod
    def create(cls, anchor_pose: Pose3, resolution: float = DEFAULT_RESOLUTION) -> "Submap":
        anchor = SE2.from_pose3(anchor_pose)
        grid = SemanticGrid(resolution, with_planar(Pose3.identity(), anchor))
        return cls(grid, None, False, anchor)

    @property
    def num_scans(self) -> int:
        return 0 if self.scan_range is None else self.scan_range[1] - self.scan_range[0] + 1


def project_scan(
    scan: Scan, pose: Pose3, grid_pose: Pose3, above: float = HEIGHT_ABOVE, below: float = HEIGHT_BELOW,
    max_range: float | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Project a scan into a grid frame: (sensor origin xy, point xy, labels) after the height band."""
    world = pose.transform(scan.positions)
    rel_h = world[:, 2] - pose.translation[2]
    keep = (rel_h <= above) & (rel_h >= -below)
    if max_range is not None:
        keep &= np.linalg.norm(scan.positions, axis=1) <= max_range
    to_grid = grid_pose.inverse()
    pts = to_grid.transform(world[keep])[:, :2]
    origin = to_grid.transform(pose.translation)[:2]
    return origin, pts, scan.labels[keep]


def insert_scan_into_submap(
    submap: Submap, scan: Scan, pose: Pose3, above: float = HEIGHT_ABOVE, below: float = HEIGHT_BELOW,
    max_range: float | None = None,
) -> int:
    """Ray-cast every point of ``scan`` (taken at world pose ``pose``); returns rays inserted."""
    if submap.finished:
        raise UsageError("cannot insert into a finished submap")
    if submap.scan_range is None:
        submap.scan_range = (scan.index, scan.index)
    else:
        submap.scan_range = (min(submap.scan_range[0], scan.index), max(submap.scan_range[1], scan.index))
    if len(scan) == 0:
        return 0
    origin, pts, labels = project_scan(scan, pose, submap.grid.local_pose, above, below, max_range)
    submap.grid.insert_rays(origin, pts, labels)
    return len(pts)


def finalize_submap(submap: Submap) -> Submap:
    submap.finished = True
    return submap


# --------------------------------------------------------------------------
# persistence
# --------------------------------------------------------------------------

_MAGIC = b"SEMSUBMP"
_VERSION = 1


def _rle_encode(a: np.ndarray) -> bytes:
    flat = a.astype(np.int32).ravel()
    if len(flat) == 0:
        return struct.pack("<I", 0)
    starts = np.r_[0, np.flatnonzero(flat[1:] != flat[:-1]) + 1]
    lengths = np.diff(np.r_[starts, len(flat)]).astype("<u4")
    values = flat[starts].astype("<i4")
    runs = np.empty(len(starts), dtype=[("n", "<u4"), ("v", "<i4")])
    runs["n"], runs["v"] = lengths, values
    return struct.pack("<I", len(runs)) + runs.tobytes()


def _rle_decode(buf: io.BytesIO, size: int) -> np.ndarray:
    (count,) = struct.unpack("<I", buf.read(4))
    runs = np.frombuffer(buf.read(8 * count), dtype=[("n", "<u4"), ("v", "<i4")])
    out = np.repeat(runs["v"], runs["n"]).astype(np.int32)
    if len(out) != size:
        raise FormatError("submap payload size mismatch")
    return out


def submap_to_bytes(submap: Submap) -> bytes:
    g = submap.grid
    w, h = g.shape
    sr = submap.scan_range or (-1, -1)
    header = struct.pack(
        "<8sHd2d4d3d3dqqBIIH",
        _MAGIC,
        _VERSION,
        g.resolution,
        *g.origin,
        *g.local_pose.quat,
        *g.local_pose.translation,
        submap.anchor.x,
        submap.anchor.y,
        submap.anchor.theta,
        sr[0],
        sr[1],
        int(submap.finished),
        w,
        h,
        len(g.layer_labels),
    )
    body = struct.pack(f"<{len(g.layer_labels)}H", *g.layer_labels)
    for k in range(len(g.layer_labels)):
        body += _rle_encode(g.hits[k])
    body += _rle_encode(g.misses)
    return header + body


def submap_from_bytes(data: bytes) -> Submap:
    buf = io.BytesIO(data)
    fmt = "<8sHd2d4d3d3dqqBIIH"
    head = buf.read(struct.calcsize(fmt))
    if len(head) < struct.calcsize(fmt):
        raise FormatError("truncated submap")
    vals = struct.unpack(fmt, head)
    if vals[0] != _MAGIC:
        raise FormatError("not a submap file")
    if vals[1] != _VERSION:
        raise FormatError(f"unsupported submap version {vals[1]}")
    res = vals[2]
    origin = np.array(vals[3:5])
    pose = Pose3(np.array(vals[5:9]), vals[9:12])
    anchor = SE2(*vals[12:15])
    sr = (vals[15], vals[16])
    finished = bool(vals[17])
    w, h, nl = vals[18], vals[19], vals[20]
    labels = list(struct.unpack(f"<{nl}H", buf.read(2 * nl)))
    g = SemanticGrid(res, pose)
    g.origin = origin
    g.layer_labels = labels
    g.hits = np.stack([_rle_decode(buf, w * h).reshape(w, h) for _ in range(nl)]) if nl else np.zeros((0, w, h), np.int32)
    g.misses = _rle_decode(buf, w * h).reshape(w, h)
    return Submap(g, None if sr == (-1, -1) else sr, finished, anchor)


def save_submap(submap: Submap, path: str | os.PathLike) -> None:
    Path(path).write_bytes(submap_to_bytes(submap))


def load_submap(path: str | os.PathLike) -> Submap:
    return submap_from_bytes(Path(path).read_bytes())


def label_color(label: int) -> tuple[int, int, int]:
    if label == 0:
        return (0, 0, 0)
    rng = np.random.default_rng(int(label) * 7919)
    return tuple(int(v) for v in rng.integers(64, 256, 3))


def export_dominant_png(submap: Submap, path: str | os.PathLike) -> None:
    """Debug image of the dominant label per cell; x to the right, y up."""
    from PIL import Image

    dom = submap.grid.dominant_labels()
    rgb = np.zeros((*dom.shape, 3), np.uint8)
    for lab in np.unique(dom):
        rgb[dom == lab] = label_color(int(lab))
    Image.fromarray(np.flipud(rgb.transpose(1, 0, 2))).save(path)
