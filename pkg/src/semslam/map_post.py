"""Final labeled map aggregation, class filtering and PLY/CSV export."""

from __future__ import annotations

import os
from collections.abc import Iterable, Sequence
from pathlib import Path

import numpy as np

from .core import FormatError, Pose3, Scan, SemanticConfig
from .preprocessing import voxel_keys

DEFAULT_EXPORT_VOXEL = 0.05

_VERTEX_DTYPE = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("label", "<u2"), ("confidence", "<f4")])


def filter_labels(scan: Scan, exclude: Iterable[int]) -> Scan:
    exclude = np.array(sorted(set(int(e) for e in exclude)), dtype=np.int64)
    if len(exclude) == 0:
        return scan
    return scan.select(~np.isin(scan.labels, exclude))


def voxel_dedup(scan: Scan, voxel: float) -> Scan:
    """Keep the first point (in input order) of every occupied voxel."""
    if voxel <= 0 or len(scan) == 0:
        return scan
    _, first = np.unique(voxel_keys(scan.positions, voxel), axis=0, return_index=True)
    return scan.select(np.sort(first))


def aggregate_map(
    scans: Sequence[Scan], poses: Sequence[Pose3], voxel: float = DEFAULT_EXPORT_VOXEL, exclude: Iterable[int] = ()
) -> Scan:
    """World-frame union of all scans minus excluded labels, voxel-deduplicated in scan order."""
    if len(scans) != len(poses):
        raise ValueError(f"scan/pose count mismatch: {len(scans)} scans, {len(poses)} poses")
    exclude = set(exclude)
    parts = [filter_labels(s, exclude).transformed(p) for s, p in zip(scans, poses)]
    return voxel_dedup(Scan.concatenate(parts), voxel)


def labels_from_names(names: Iterable[str], cfg: SemanticConfig | None = None) -> set[int]:
    """Resolve class names (or numeric ids) to label ids."""
    cfg = cfg or SemanticConfig()
    out = set()
    for name in names:
        name = name.strip()
        if not name:
            continue
        out.add(int(name) if name.isdigit() else cfg.label_id(name))
    return out


# --------------------------------------------------------------------------
# PLY / CSV
# --------------------------------------------------------------------------


def _header(n: int, fmt: str) -> str:
    return (
        "ply\n"
        f"format {fmt} 1.0\n"
        f"element vertex {n}\n"
        "property float x\nproperty float y\nproperty float z\n"
        "property ushort label\nproperty float confidence\n"
        "end_header\n"
    )


def export_ply(points: Scan, path: str | os.PathLike, binary: bool = False) -> None:
    n = len(points)
    path = Path(path)
    if binary:
        rec = np.empty(n, dtype=_VERTEX_DTYPE)
        rec["x"], rec["y"], rec["z"] = points.positions.T if n else ([], [], [])
        rec["label"] = points.labels
        rec["confidence"] = points.confidences
        with open(path, "wb") as f:
            f.write(_header(n, "binary_little_endian").encode("ascii"))
            f.write(rec.tobytes())
        return
    with open(path, "w") as f:
        f.write(_header(n, "ascii"))
        for (x, y, z), lab, c in zip(points.positions, points.labels, points.confidences):
            f.write(f"{x:.7g} {y:.7g} {z:.7g} {int(lab)} {c:.7g}\n")


def read_ply(path: str | os.PathLike) -> Scan:
    """Reader for the vertex layout written by :func:`export_ply` (ASCII or binary little-endian)."""
    data = Path(path).read_bytes()
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply\n") or end < 0:
        raise FormatError("not a PLY file")
    header = data[:end].decode("ascii").splitlines()
    body = data[end + len(b"end_header\n") :]
    fmt, n, props = None, None, []
    for line in header:
        tok = line.split()
        if tok[:1] == ["format"]:
            fmt = tok[1]
        elif tok[:2] == ["element", "vertex"]:
            n = int(tok[2])
        elif tok[:1] == ["property"]:
            props.append(tok[-1])
    if n is None or props != list(_VERTEX_DTYPE.names):
        raise FormatError("unsupported PLY vertex layout")
    if fmt == "ascii":
        rows = body.decode("ascii").split()
        if len(rows) != 5 * n:
            raise FormatError("PLY vertex count mismatch")
        arr = np.array(rows, dtype=float).reshape(n, 5)
        return Scan(arr[:, :3], arr[:, 3].astype(np.uint16), arr[:, 4])
    if fmt == "binary_little_endian":
        if len(body) < n * _VERTEX_DTYPE.itemsize:
            raise FormatError("PLY vertex count mismatch")
        rec = np.frombuffer(body, dtype=_VERTEX_DTYPE, count=n)
        pos = np.stack([rec["x"], rec["y"], rec["z"]], axis=1).astype(float)
        return Scan(pos, rec["label"].copy(), rec["confidence"].astype(float))
    raise FormatError(f"unsupported PLY format {fmt}")


def export_csv(points: Scan, path: str | os.PathLike) -> None:
    with open(path, "w") as f:
        f.write("x,y,z,label\n")
        for (x, y, z), lab in zip(points.positions, points.labels):
            f.write(f"{x:.7g},{y:.7g},{z:.7g},{int(lab)}\n")


def filter_ply(src: str | os.PathLike, exclude: Iterable[int], dst: str | os.PathLike, binary: bool | None = None) -> int:
    """Drop excluded labels from a PLY map; returns the surviving vertex count."""
    pts = filter_labels(read_ply(src), exclude)
    if binary is None:
        binary = b"binary_little_endian" in Path(src).read_bytes()[:64]
    export_ply(pts, dst, binary)
    return len(pts)
