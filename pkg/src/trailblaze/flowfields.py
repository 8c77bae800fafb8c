"""Sparse pyramidal Lucas-Kanade tracking and dense Farneback-style flow.

Both operate on intensities scaled to [0, 1] with replicate-edge borders
and a 3-level half-resolution pyramid (5x5 binomial antialiasing).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .media import Frame

BINOMIAL5 = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0

LK_MAX_ITERS = 20
LK_EPS = 0.01
LK_MIN_EIG_FACTOR = 1e-4  # threshold = factor * window**2


@dataclass(frozen=True)
class TrackResult:
    point: tuple
    status: str  # "tracked" | "lost"


@dataclass(frozen=True)
class FlowField:
    """Dense displacement field; u is the x component, v the y component."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        if self.u.shape != self.v.shape:
            raise ValueError("u and v must share shape")

    @property
    def width(self):
        return self.u.shape[1]

    @property
    def height(self):
        return self.u.shape[0]


def _to_float(frame) -> np.ndarray:
    if isinstance(frame, Frame):
        return frame.gray_array() / 255.0
    arr = np.asarray(frame, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("expected grayscale image")
    if arr.max(initial=0.0) > 1.5:
        arr = arr / 255.0
    return arr


def _downsample(img: np.ndarray) -> np.ndarray:
    sm = ndimage.correlate1d(img, BINOMIAL5, axis=0, mode="nearest")
    sm = ndimage.correlate1d(sm, BINOMIAL5, axis=1, mode="nearest")
    return sm[::2, ::2]


def _pyramid(img: np.ndarray, levels: int, min_dim: int) -> list:
    pyr = [img]
    for _ in range(1, levels):
        nxt = _downsample(pyr[-1])
        if min(nxt.shape) < min_dim:
            break
        pyr.append(nxt)
    return pyr


def _bilinear(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Replicate-edge bilinear sampling at float coordinates."""
    h, w = img.shape
    xs = np.clip(xs, 0.0, w - 1.0)
    ys = np.clip(ys, 0.0, h - 1.0)
    x0 = np.minimum(np.floor(xs).astype(int), w - 2) if w > 1 else np.zeros_like(xs, int)
    y0 = np.minimum(np.floor(ys).astype(int), h - 2) if h > 1 else np.zeros_like(ys, int)
    fx = xs - x0
    fy = ys - y0
    return (img[y0, x0] * (1 - fx) * (1 - fy) + img[y0, x0 + 1] * fx * (1 - fy)
            + img[y0 + 1, x0] * (1 - fx) * fy + img[y0 + 1, x0 + 1] * fx * fy)


def _gradients(img: np.ndarray) -> tuple:
    gx = np.empty_like(img)
    gx[:, 1:-1] = (img[:, 2:] - img[:, :-2]) / 2.0
    gx[:, 0] = img[:, 1] - img[:, 0]
    gx[:, -1] = img[:, -1] - img[:, -2]
    gy = np.empty_like(img)
    gy[1:-1, :] = (img[2:, :] - img[:-2, :]) / 2.0
    gy[0, :] = img[1, :] - img[0, :]
    gy[-1, :] = img[-1, :] - img[-2, :]
    return gx, gy


def lk_track(prev, next, points, levels: int = 3, window: int = 15) -> list:
    """Track `points` from prev to next with iterative coarse-to-fine LK.

    A point is lost when the finest-level gradient matrix is too weak
    (smaller eigenvalue below 1e-4 * window^2) or when the tracking window
    leaves the frame.
    """
    img0 = _to_float(prev)
    img1 = _to_float(next)
    if img0.shape != img1.shape:
        raise ValueError("frames must share dimensions")
    if levels < 1:
        raise ValueError("levels must be >= 1")
    if window < 5 or window % 2 == 0:
        raise ValueError("window must be odd and >= 5")

    pyr0 = _pyramid(img0, levels, window + 2)
    pyr1 = _pyramid(img1, levels, window + 2)
    grads = [_gradients(im) for im in pyr0]
    half = window // 2
    off = np.arange(-half, half + 1, dtype=np.float64)
    oy, ox = np.meshgrid(off, off, indexing="ij")
    h, w = img0.shape
    min_eig_thresh = LK_MIN_EIG_FACTOR * window * window

    results = []
    for p in points:
        px, py = float(p[0]), float(p[1])
        if not (half + 1 <= px <= w - 2 - half and half + 1 <= py <= h - 2 - half):
            results.append(TrackResult((px, py), "lost"))
            continue
        g = np.zeros(2)
        lost = False
        for lvl in range(len(pyr0) - 1, -1, -1):
            scale = 2.0 ** lvl
            plx, ply = px / scale, py / scale
            gx, gy = grads[lvl]
            sx = plx + ox
            sy = ply + oy
            Ix = _bilinear(gx, sx, sy)
            Iy = _bilinear(gy, sx, sy)
            G = np.array([[np.sum(Ix * Ix), np.sum(Ix * Iy)],
                          [np.sum(Ix * Iy), np.sum(Iy * Iy)]])
            if lvl == 0:
                eig_min = np.linalg.eigvalsh(G)[0]
                if eig_min < min_eig_thresh:
                    lost = True
                    break
            det = G[0, 0] * G[1, 1] - G[0, 1] * G[1, 0]
            if det <= 1e-12:
                if lvl == 0:
                    lost = True
                    break
                g = 2.0 * g
                continue
            Ginv = np.array([[G[1, 1], -G[0, 1]], [-G[1, 0], G[0, 0]]]) / det
            I0 = _bilinear(pyr0[lvl], sx, sy)
            nu = np.zeros(2)
            for _ in range(LK_MAX_ITERS):
                I1 = _bilinear(pyr1[lvl], sx + g[0] + nu[0], sy + g[1] + nu[1])
                dI = I0 - I1
                b = np.array([np.sum(dI * Ix), np.sum(dI * Iy)])
                step = Ginv @ b
                nu += step
                if np.hypot(step[0], step[1]) < LK_EPS:
                    break
            g = (g + nu) if lvl == 0 else 2.0 * (g + nu)
        if lost:
            results.append(TrackResult((px, py), "lost"))
            continue
        qx, qy = px + g[0], py + g[1]
        if not (half + 1 <= qx <= w - 2 - half and half + 1 <= qy <= h - 2 - half):
            results.append(TrackResult((qx, qy), "lost"))
        else:
            results.append(TrackResult((qx, qy), "tracked"))
    return results


# ---------------------------------------------------------------------------
# Farneback polynomial-expansion flow


def _poly_expand(img: np.ndarray, n: int, sigma: float):
    """Per-pixel quadratic fit f ~ c + b.x + x'Ax under Gaussian applicability.

    Returns (A11, A12, A22, b1, b2) image stacks; coordinates are (x, y)
    with x along columns.
    """
    half = n // 2
    xs = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(xs ** 2) / (2.0 * sigma ** 2))
    g /= g.sum()
    xg = xs * g
    x2g = xs ** 2 * g

    m2 = float(np.sum(x2g))
    m4 = float(np.sum(xs ** 4 * g))
    # metric of basis (1, x, y, x^2, y^2, xy) under separable Gaussian weight
    G = np.array([
        [1.0, 0.0, 0.0, m2, m2, 0.0],
        [0.0, m2, 0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, m2, 0.0, 0.0, 0.0],
        [m2, 0.0, 0.0, m4, m2 * m2, 0.0],
        [m2, 0.0, 0.0, m2 * m2, m4, 0.0],
        [0.0, 0.0, 0.0, 0.0, 0.0, m2 * m2],
    ])
    Ginv = np.linalg.inv(G)

    def corr(kernel_y, kernel_x):
        out = ndimage.correlate1d(img, kernel_y, axis=0, mode="nearest")
        return ndimage.correlate1d(out, kernel_x, axis=1, mode="nearest")

    v = np.stack([
        corr(g, g),     # <1, f>
        corr(g, xg),    # <x, f>
        corr(xg, g),    # <y, f>
        corr(g, x2g),   # <x^2, f>
        corr(x2g, g),   # <y^2, f>
        corr(xg, xg),   # <xy, f>
    ])
    r = np.einsum("ij,jhw->ihw", Ginv, v)
    b1, b2 = r[1], r[2]
    A11, A22, A12 = r[3], r[4], r[5] / 2.0
    return A11, A12, A22, b1, b2


def _solve_flow(A11, A12, A22, b1, b2, window: int):
    """Window-averaged least squares of A d = delta_b."""
    t11 = A11 * A11 + A12 * A12
    t12 = A12 * (A11 + A22)
    t22 = A12 * A12 + A22 * A22
    h1 = A11 * b1 + A12 * b2
    h2 = A12 * b1 + A22 * b2
    box = lambda im: ndimage.uniform_filter(im, size=window, mode="nearest")
    G11, G12, G22 = box(t11), box(t12), box(t22)
    H1, H2 = box(h1), box(h2)
    det = G11 * G22 - G12 * G12
    det = np.where(np.abs(det) < 1e-12, 1e-12, det)
    u = (G22 * H1 - G12 * H2) / det
    v = (G11 * H2 - G12 * H1) / det
    return u, v


def farneback_flow(prev, next, levels: int = 3, window: int = 15,
                   iterations: int = 3, poly_n: int = 7,
                   poly_sigma: float = 1.5) -> FlowField:
    """Dense displacement field from prev to next.

    Polynomial expansion of both frames per pyramid level; the displacement
    solves the window-averaged expansion-difference equations and is refined
    `iterations` times per level, coarse to fine.
    """
    img0 = _to_float(prev)
    img1 = _to_float(next)
    if img0.shape != img1.shape:
        raise ValueError("frames must share dimensions")
    if levels < 1 or iterations < 1:
        raise ValueError("levels and iterations must be >= 1")

    pyr0 = _pyramid(img0, levels, poly_n + 2)
    pyr1 = _pyramid(img1, levels, poly_n + 2)
    u = np.zeros_like(pyr0[-1])
    v = np.zeros_like(pyr0[-1])

    for lvl in range(len(pyr0) - 1, -1, -1):
        p0, p1 = pyr0[lvl], pyr1[lvl]
        h, w = p0.shape
        if u.shape != p0.shape:
            u = np.repeat(np.repeat(u, 2, axis=0), 2, axis=1)[:h, :w] * 2.0
            v = np.repeat(np.repeat(v, 2, axis=0), 2, axis=1)[:h, :w] * 2.0
        A11a, A12a, A22a, b1a, b2a = _poly_expand(p0, poly_n, poly_sigma)
        A11b, A12b, A22b, b1b, b2b = _poly_expand(p1, poly_n, poly_sigma)
        yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
        for _ in range(iterations):
            sx = xx + u
            sy = yy + v
            wA11 = _bilinear(A11b, sx, sy)
            wA12 = _bilinear(A12b, sx, sy)
            wA22 = _bilinear(A22b, sx, sy)
            wb1 = _bilinear(b1b, sx, sy)
            wb2 = _bilinear(b2b, sx, sy)
            A11 = 0.5 * (A11a + wA11)
            A12 = 0.5 * (A12a + wA12)
            A22 = 0.5 * (A22a + wA22)
            db1 = -0.5 * (wb1 - b1a) + A11 * u + A12 * v
            db2 = -0.5 * (wb2 - b2a) + A12 * u + A22 * v
            u, v = _solve_flow(A11, A12, A22, db1, db2, window)
    return FlowField(u=u, v=v)


def sample_flow(field: FlowField, p) -> tuple:
    """Bilinearly interpolated displacement at subpixel point p = (x, y)."""
    x, y = float(p[0]), float(p[1])
    if not (0.0 <= x <= field.width - 1 and 0.0 <= y <= field.height - 1):
        raise ValueError(f"point {p} outside flow field bounds")
    xs = np.array([x])
    ys = np.array([y])
    return (float(_bilinear(field.u, xs, ys)[0]), float(_bilinear(field.v, xs, ys)[0]))
