"""On-disk run artifacts: snapshot streams, couplings, metadata.

All CSV floats are written with ``repr`` (shortest round-trip form), so
identical runs produce byte-identical files on the same platform.
"""

from __future__ import annotations

import json
import os

import numpy as np

__all__ = [
    "write_coupling_csv",
    "read_coupling_csv",
    "write_snapshots_csv",
    "write_points_csv",
    "write_barycenter_snapshots_csv",
    "write_json",
]


def _fmt(values) -> str:
    return ",".join(repr(float(v)) for v in values)


def write_coupling_csv(path: str, x: np.ndarray, y: np.ndarray) -> None:
    """Write final pairs: header ``particle,x0..x{d-1},y0..y{d-1}``."""
    d = x.shape[1]
    header = (
        "particle,"
        + ",".join(f"x{j}" for j in range(d))
        + ","
        + ",".join(f"y{j}" for j in range(d))
    )
    lines = [header]
    for i in range(x.shape[0]):
        lines.append(f"{i},{_fmt(x[i])},{_fmt(y[i])}")
    _write_lines(path, lines)


def read_coupling_csv(path: str) -> tuple[np.ndarray, np.ndarray]:
    """Read a coupling CSV back into (x, y) arrays of shape (N, d)."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if header[0] != "particle":
            raise ValueError(f"{path}: not a coupling CSV (header starts with {header[0]!r})")
        xcols = [i for i, name in enumerate(header) if name.startswith("x")]
        ycols = [i for i, name in enumerate(header) if name.startswith("y")]
        if not xcols or len(xcols) != len(ycols):
            raise ValueError(f"{path}: header must carry matching x*/y* columns")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    data = np.array([[float(v) for v in row] for row in rows])
    if data.size == 0:
        raise ValueError(f"{path}: no data rows")
    return data[:, xcols], data[:, ycols]


def write_snapshots_csv(path: str, snapshots) -> None:
    """Write the snapshot stream: ``iter,particle,x0..x{d-1},y0..y{d-1}``."""
    _, x0, _ = snapshots[0]
    d = x0.shape[1]
    header = (
        "iter,particle,"
        + ",".join(f"x{j}" for j in range(d))
        + ","
        + ",".join(f"y{j}" for j in range(d))
    )
    lines = [header]
    for it, x, y in snapshots:
        for i in range(x.shape[0]):
            lines.append(f"{it},{i},{_fmt(x[i])},{_fmt(y[i])}")
    _write_lines(path, lines)


def write_points_csv(path: str, points: np.ndarray) -> None:
    """Write a plain point cloud: ``particle,x0..x{d-1}``."""
    pts = np.atleast_2d(points)
    header = "particle," + ",".join(f"x{j}" for j in range(pts.shape[1]))
    lines = [header]
    for i in range(pts.shape[0]):
        lines.append(f"{i},{_fmt(pts[i])}")
    _write_lines(path, lines)


def write_barycenter_snapshots_csv(path: str, snapshots) -> None:
    """Write block snapshots: ``iter,particle,block,x0..x{d-1}``."""
    blocks0 = snapshots[0][1]
    d = blocks0.shape[2]
    header = "iter,particle,block," + ",".join(f"x{j}" for j in range(d))
    lines = [header]
    for it, blocks in snapshots:
        for b in range(blocks.shape[0]):
            for i in range(blocks.shape[1]):
                lines.append(f"{it},{i},{b},{_fmt(blocks[b, i])}")
    _write_lines(path, lines)


def write_json(path: str, payload: dict) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_lines(path: str, lines: list[str]) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines))
        fh.write("\n")
