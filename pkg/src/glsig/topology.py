"""Polygonal loops, skeletons and the h-signature.

All curves are plain ``(n, 3)`` float arrays.  A loop is closed by
convention: the last vertex connects back to the first and is never
repeated at the end of the array.

The h-signature of a loop ``tau`` against an obstacle loop ``s`` is the
Gauss linking integral.  The field of ``s`` is evaluated exactly per
segment (Biot-Savart form) and the outer integral over ``tau`` is done
numerically with a fixed Gauss-Legendre rule on every segment of ``tau``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numba import njit

EPS_GEOM = 1e-9
EPS_ROUND = 0.05
QUAD_NODES = 8
MAX_PIECES = 64


class TopologyError(ValueError):
    pass


class DegenerateGeometry(TopologyError):
    """A query point lies on (the line through) a source segment."""


class NonIntegralSignature(TopologyError):
    """The linking integral is too far from an integer to be trusted."""


def as_points(points, *, min_points: int = 2, name: str = "points") -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise TopologyError(f"{name} must have shape (n, 3), got {arr.shape}")
    if len(arr) < min_points:
        raise TopologyError(f"{name} needs at least {min_points} points, got {len(arr)}")
    if not np.all(np.isfinite(arr)):
        raise TopologyError(f"{name} contains non-finite coordinates")
    return arr


def as_polyline(points) -> np.ndarray:
    arr = as_points(points, min_points=2, name="polyline")
    if np.any(np.linalg.norm(np.diff(arr, axis=0), axis=1) <= 0.0):
        raise TopologyError("polyline has a zero-length segment")
    return arr


def as_loop(points) -> np.ndarray:
    arr = as_points(points, min_points=3, name="loop")
    seg = np.roll(arr, -1, axis=0) - arr
    if np.any(np.linalg.norm(seg, axis=1) <= 0.0):
        raise TopologyError("loop has a zero-length segment (is the first point repeated at the end?)")
    return arr


def loop_segments(loop: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (starts, ends) of the closed loop's segments."""
    return loop, np.roll(loop, -1, axis=0)


@dataclass
class Skeleton:
    """Named obstacle loops, in declaration order."""

    names: list[str] = field(default_factory=list)
    loops: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if len(self.names) != len(self.loops):
            raise TopologyError("skeleton names and loops differ in length")
        if len(set(self.names)) != len(self.names):
            raise TopologyError(f"duplicate skeleton loop names: {self.names}")
        self.loops = [as_loop(lp) for lp in self.loops]

    @classmethod
    def from_dict(cls, loops: dict) -> "Skeleton":
        return cls(list(loops), [np.asarray(v, dtype=float) for v in loops.values()])

    def __len__(self) -> int:
        return len(self.loops)

    def __iter__(self):
        return iter(zip(self.names, self.loops))

    def loop(self, name: str) -> np.ndarray:
        try:
            return self.loops[self.names.index(name)]
        except ValueError:
            raise KeyError(f"no skeleton loop named {name!r}") from None


def _cross(u, v):
    # np.cross is slow for small arrays; this is the same product written out
    return np.stack([
        u[..., 1] * v[..., 2] - u[..., 2] * v[..., 1],
        u[..., 2] * v[..., 0] - u[..., 0] * v[..., 2],
        u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0],
    ], axis=-1)


@lru_cache(maxsize=None)
def _gauss_legendre(nodes: int):
    return np.polynomial.legendre.leggauss(nodes)


def _field(starts: np.ndarray, ends: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Per-segment field, shape ``r.shape[:-1] + (n_seg, 3)``.

    ``starts``/``ends`` are ``(n_seg, 3)``; ``r`` is ``(..., 3)``.
    """
    r = r[..., None, :]
    p = starts - r
    pp = ends - r
    e = ends - starts
    d = _cross(e, _cross(p, pp)) / np.einsum("ij,ij->i", e, e)[:, None]
    dd = np.einsum("...k,...k->...", d, d)
    if np.any(dd < EPS_GEOM**2):
        raise DegenerateGeometry("query point lies on the line of a source segment")
    pn = np.sqrt(np.einsum("...k,...k->...", p, p))[..., None]
    ppn = np.sqrt(np.einsum("...k,...k->...", pp, pp))[..., None]
    return (_cross(d, pp) / ppn - _cross(d, p) / pn) / dd[..., None]


def segment_field(seg_start, seg_end, r) -> np.ndarray:
    """Field of one straight source segment at point ``r``.

    Equals the Biot-Savart integral of the segment without the 1/(4 pi)
    prefactor.
    """
    s0 = np.asarray(seg_start, dtype=float).reshape(1, 3)
    s1 = np.asarray(seg_end, dtype=float).reshape(1, 3)
    if np.linalg.norm(s1 - s0) <= 0.0:
        raise DegenerateGeometry("zero-length source segment")
    return _field(s0, s1, np.asarray(r, dtype=float))[..., 0, :]


def loop_field(loop, r) -> np.ndarray:
    """Summed field of a closed loop at one or many points ``r`` (..., 3)."""
    starts, ends = loop_segments(as_loop(loop))
    return _field(starts, ends, np.asarray(r, dtype=float)).sum(axis=-2)


def _quadrature(tau: np.ndarray, nodes: int, scale=None) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature points on every segment of ``tau`` and their weighted tangents.

    With ``scale`` (one length per segment) a segment is first split into
    pieces no longer than its scale, so long straight edges passing close
    to the other loop are still integrated accurately.
    """
    x, w = _gauss_legendre(nodes)
    t = 0.5 * (x + 1.0)
    a, b = loop_segments(tau)
    if scale is not None:
        length = np.linalg.norm(b - a, axis=1)
        pieces = np.clip(np.ceil(length / np.maximum(scale, 1e-12)), 1, MAX_PIECES).astype(int)
        if np.any(pieces > 1):
            frac = np.concatenate([np.arange(k) / k for k in pieces])
            seg_id = np.repeat(np.arange(len(a)), pieces)
            step = (b - a)[seg_id] / pieces[seg_id, None]
            a = a[seg_id] + frac[:, None] * (b - a)[seg_id]
            b = a + step
    seg = b - a
    pts = a[:, None, :] + t[None, :, None] * seg[:, None, :]
    dr = 0.5 * w[None, :, None] * seg[:, None, :]
    return pts.reshape(-1, 3), dr.reshape(-1, 3)


@njit(cache=True)
def _linking_sum(pts, dr, starts, ends, eps):
    """Sum of field . dr over quadrature points; NaN flags a degenerate point."""
    total = 0.0
    for i in range(pts.shape[0]):
        rx, ry, rz = pts[i, 0], pts[i, 1], pts[i, 2]
        fx = fy = fz = 0.0
        for j in range(starts.shape[0]):
            px, py, pz = starts[j, 0] - rx, starts[j, 1] - ry, starts[j, 2] - rz
            qx, qy, qz = ends[j, 0] - rx, ends[j, 1] - ry, ends[j, 2] - rz
            ex, ey, ez = qx - px, qy - py, qz - pz
            cx, cy, cz = py * qz - pz * qy, pz * qx - px * qz, px * qy - py * qx
            ee = ex * ex + ey * ey + ez * ez
            dx = (ey * cz - ez * cy) / ee
            dy = (ez * cx - ex * cz) / ee
            dz = (ex * cy - ey * cx) / ee
            dd = dx * dx + dy * dy + dz * dz
            if dd < eps * eps:
                return np.nan
            pn = np.sqrt(px * px + py * py + pz * pz)
            qn = np.sqrt(qx * qx + qy * qy + qz * qz)
            fx += ((dy * qz - dz * qy) / qn - (dy * pz - dz * py) / pn) / dd
            fy += ((dz * qx - dx * qz) / qn - (dz * px - dx * pz) / pn) / dd
            fz += ((dx * qy - dy * qx) / qn - (dx * py - dy * px) / pn) / dd
        total += fx * dr[i, 0] + fy * dr[i, 1] + fz * dr[i, 2]
    return total


def signed_linking(tau, s, nodes: int = QUAD_NODES) -> float:
    """Signed linking integral of two closed polygons."""
    tau = as_loop(tau)
    s = as_loop(s)
    starts, ends = loop_segments(s)
    scale = segment_distances(*loop_segments(tau), starts, ends).min(axis=1)
    if scale.min() < EPS_GEOM:
        raise DegenerateGeometry(f"loops touch (distance {scale.min():.2e})")
    pts, dr = _quadrature(tau, nodes, scale)
    total = _linking_sum(pts, dr, starts, np.ascontiguousarray(ends), EPS_GEOM)
    if np.isnan(total):
        raise DegenerateGeometry("a point of one loop lies on the line of a segment of the other")
    return total / (4.0 * np.pi)


def h_raw(tau, s, nodes: int = QUAD_NODES) -> float:
    """Unsigned linking integral; orientation of either loop is irrelevant."""
    return abs(signed_linking(tau, s, nodes))


def h_int(tau, s, nodes: int = QUAD_NODES, eps_round: float = EPS_ROUND) -> int:
    value = h_raw(tau, s, nodes)
    rounded = round(value)
    if abs(value - rounded) > eps_round:
        raise NonIntegralSignature(
            f"linking integral {value:.4f} is not within {eps_round} of an integer"
        )
    return int(rounded)


def h_vector(tau, skel: Skeleton, nodes: int = QUAD_NODES) -> tuple[int, ...]:
    """h-signature of ``tau`` against every skeleton loop, in declared order."""
    out = []
    for name, s in skel:
        try:
            out.append(h_int(tau, s, nodes))
        except TopologyError as exc:
            raise type(exc)(f"skeleton loop {name!r}: {exc}") from exc
    return tuple(out)


def segment_distances(p0, p1, q0, q1) -> np.ndarray:
    """Closest distance between every segment [p0, p1] and every [q0, q1].

    Inputs are ``(n, 3)`` and ``(m, 3)``; the result is ``(n, m)``.
    """
    p0, p1, q0, q1 = (np.atleast_2d(np.asarray(v, dtype=float)) for v in (p0, p1, q0, q1))
    d1 = (p1 - p0)[:, None, :]
    d2 = (q1 - q0)[None, :, :]
    r = p0[:, None, :] - q0[None, :, :]
    a = np.einsum("ijk,ijk->ij", d1, d1) + np.zeros(r.shape[:2])
    e = np.einsum("ijk,ijk->ij", d2, d2) + np.zeros(r.shape[:2])
    b = np.einsum("ijk,ijk->ij", d1, d2)
    c = np.einsum("ijk,ijk->ij", d1, r)
    f = np.einsum("ijk,ijk->ij", d2, r)
    a_safe = np.where(a > 1e-18, a, 1.0)
    e_safe = np.where(e > 1e-18, e, 1.0)
    den = a * e - b * b
    s = np.where(den > 1e-18, np.clip((b * f - c * e) / np.where(den > 1e-18, den, 1.0), 0.0, 1.0), 0.0)
    t = (b * s + f) / e_safe
    low = t < 0.0
    high = t > 1.0
    s = np.where(low, np.clip(-c / a_safe, 0.0, 1.0), s)
    s = np.where(high, np.clip((b - c) / a_safe, 0.0, 1.0), s)
    t = np.clip(t, 0.0, 1.0)
    # degenerate (point-like) segments
    s = np.where(a > 1e-18, np.where(e > 1e-18, s, np.clip(-c / a_safe, 0.0, 1.0)), 0.0)
    t = np.where(e > 1e-18, t, np.where(a > 1e-18, t, np.clip(f / e_safe, 0.0, 1.0)))
    diff = r + s[..., None] * d1 - t[..., None] * d2
    return np.linalg.norm(diff, axis=-1)


def min_distance(a, b) -> float:
    """Smallest distance between two closed polygons."""
    a = as_loop(a)
    b = as_loop(b)
    return float(segment_distances(*loop_segments(a), *loop_segments(b)).min())
