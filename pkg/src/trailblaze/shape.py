"""Trajectory shape descriptors: concatenated forward-difference derivatives.

The order-r descriptor of an (l+1)-point trajectory in n dimensions stacks
the derivative sequences of orders 1..r, each point flattened x,y[,d] and
points laid out in time order.  Its dimension is n*(r*(l+1) - r*(r+1)/2).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAX_ORDER = 7


@dataclass(frozen=True)
class ShapeDescriptor:
    values: np.ndarray
    r: int
    n: int
    l: int

    def __post_init__(self):
        if self.values.size != descriptor_dim(self.n, self.l, self.r):
            raise ValueError("descriptor size does not match (n, l, r)")


def descriptor_dim(n: int, l: int, r: int) -> int:
    return n * (r * (l + 1) - r * (r + 1) // 2)


def derivative(seq) -> np.ndarray:
    """Forward difference per frame step: out[i] = seq[i+1] - seq[i]."""
    pts = np.asarray(seq, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    if len(pts) < 2:
        raise ValueError("need at least 2 points to differentiate")
    return np.diff(pts, axis=0)


def describe(traj, r: int, normalize: bool = False) -> ShapeDescriptor:
    """Concatenation of derivatives of orders 1..r of a trajectory.

    `traj` is a tracking.Trajectory or an (l+1, n) array.  When `normalize`
    is set the vector is scaled by its sum of magnitudes (experiment knob,
    off by default).
    """
    pts = np.asarray(getattr(traj, "points", traj), dtype=np.float64)
    if pts.ndim != 2:
        raise ValueError("trajectory must be a 2-D point array")
    l = len(pts) - 1
    n = pts.shape[1]
    if r < 1:
        raise ValueError("order must be >= 1")
    if r > l:
        raise ValueError(f"order {r} exceeds trajectory length {l}")
    if r > MAX_ORDER:
        raise ValueError(f"order {r} exceeds the supported maximum {MAX_ORDER}")
    blocks = []
    cur = pts
    for _ in range(r):
        cur = np.diff(cur, axis=0)
        blocks.append(cur.ravel())
    values = np.concatenate(blocks)
    if normalize:
        s = np.abs(values).sum()
        if s > 0:
            values = values / s
    return ShapeDescriptor(values=values, r=r, n=n, l=l)


# ---------------------------------------------------------------------------
# Descriptor files: one line per descriptor, `clip_id label n l r v0 v1 ...`


def write_descriptors(path, rows) -> None:
    """rows: iterable of (clip_id, label, ShapeDescriptor)."""
    lines = []
    for clip_id, label, desc in rows:
        vals = " ".join(f"{v:.6f}" for v in desc.values)
        lines.append(f"{clip_id} {label} {desc.n} {desc.l} {desc.r} {vals}")
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_descriptors(path) -> list:
    """Returns a list of (clip_id, label, ShapeDescriptor)."""
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) < 5:
            raise ValueError(f"descriptor file line {lineno}: too few fields")
        clip_id, label = parts[0], parts[1]
        n, l, r = int(parts[2]), int(parts[3]), int(parts[4])
        values = np.array([float(x) for x in parts[5:]])
        out.append((clip_id, label, ShapeDescriptor(values=values, r=r, n=n, l=l)))
    return out
