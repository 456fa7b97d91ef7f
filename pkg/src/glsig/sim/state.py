from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from glsig.topology import Skeleton


class SimError(RuntimeError):
    pass


class OutOfRange(SimError, ValueError):
    pass


@dataclass
class RopeState:
    """Ordered rope vertices with a uniform rest length per segment."""

    points: np.ndarray
    rest_len: float
    vel: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.array(self.points, dtype=float)
        if self.points.ndim != 2 or self.points.shape[1] != 3 or len(self.points) < 10:
            raise ValueError(f"rope needs shape (N>=10, 3), got {self.points.shape}")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("rope has non-finite coordinates")
        self.vel = np.zeros_like(self.points) if self.vel is None else np.array(self.vel, dtype=float)

    @classmethod
    def from_points(cls, points) -> "RopeState":
        pts = np.asarray(points, dtype=float)
        return cls(pts, float(np.mean(np.linalg.norm(np.diff(pts, axis=0), axis=1))))

    @property
    def n(self) -> int:
        return len(self.points)

    def strain(self) -> float:
        seg = np.linalg.norm(np.diff(self.points, axis=0), axis=1)
        return float(np.max(np.abs(seg - self.rest_len)) / self.rest_len)


def l_to_index(n: int, l: float) -> tuple[int, float]:
    """Segment index and in-segment weight of material coordinate ``l``."""
    if not 0.0 <= l <= 1.0:
        raise OutOfRange(f"rope location {l} outside [0, 1]")
    u = l * (n - 1)
    i = min(int(np.floor(u)), n - 2)
    return i, u - i


def p_of_l(rope: RopeState | np.ndarray, l: float) -> np.ndarray:
    """Point at material coordinate ``l`` (0 = first vertex, 1 = last).

    ``l`` is arc length in the rest configuration, so interpolation is
    linear between the two neighbouring vertices.
    """
    pts = rope.points if isinstance(rope, RopeState) else np.asarray(rope)
    i, w = l_to_index(len(pts), l)
    return (1.0 - w) * pts[i] + w * pts[i + 1]


def rope_between(points: np.ndarray, la: float, lb: float) -> np.ndarray:
    """Polyline along the rope from ``p(la)`` to ``p(lb)`` (either order)."""
    n = len(points)
    lo, hi = min(la, lb), max(la, lb)
    inner = [k for k in range(n) if lo < k / (n - 1) < hi]
    path = np.vstack([p_of_l(points, lo)[None], points[inner].reshape(-1, 3), p_of_l(points, hi)[None]])
    return path if la <= lb else path[::-1]


@dataclass
class GripperState:
    position: np.ndarray
    grasping: bool = False
    grasp_loc: float | None = None
    shoulder: np.ndarray | None = None

    def __post_init__(self):
        self.position = np.array(self.position, dtype=float)
        if self.shoulder is not None:
            self.shoulder = np.array(self.shoulder, dtype=float)
        if self.grasping and self.grasp_loc is None:
            raise ValueError("grasping gripper needs a grasp_loc")
        if not self.grasping:
            self.grasp_loc = None


@dataclass(frozen=True)
class Attach:
    """Rope end fixed to the world."""

    loc: float
    point: tuple[float, float, float]

    def __post_init__(self):
        if self.loc not in (0.0, 1.0):
            raise ValueError(f"attach location must be a rope end (0 or 1), got {self.loc}")


@dataclass
class SimState:
    rope: RopeState
    grippers: list[GripperState]
    attach: tuple[Attach, ...] = ()
    contacts: int = 0
    time: float = 0.0

    def copy(self) -> "SimState":
        return copy.deepcopy(self)

    def grasp_locations(self) -> list[float]:
        return [g.grasp_loc for g in self.grippers if g.grasping]

    def robot_q(self) -> np.ndarray:
        """Stacked gripper positions; stands in for joint angles in trap detection."""
        return np.concatenate([g.position for g in self.grippers])

    def keypoint(self, l: float) -> np.ndarray:
        return p_of_l(self.rope, l)


def geodesic(locs, l_k: float) -> float:
    """Smallest |l - l_k| over ``locs``; infinite when nothing is grasped."""
    locs = list(locs)
    return min(abs(l - l_k) for l in locs) if locs else float("inf")


@dataclass
class Box:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.lo = np.array(self.lo, dtype=float)
        self.hi = np.array(self.hi, dtype=float)
        if np.any(self.hi <= self.lo):
            raise ValueError("box needs hi > lo on every axis")


@dataclass
class Capsule:
    a: np.ndarray
    b: np.ndarray
    radius: float

    def __post_init__(self):
        self.a = np.array(self.a, dtype=float)
        self.b = np.array(self.b, dtype=float)


@dataclass
class SimParams:
    dt: float = 0.05
    iterations: int = 20
    damping: float = 0.8
    v_max: float = 0.2
    grasp_radius: float = 0.05
    gripper_radius: float = 0.02
    arm_radius: float = 0.02
    rope_radius: float = 0.01
    reach: float = 1.0
    strain_limit: float = 0.04
    contact_tol: float = 0.005
    settle_steps: int = 10
    l_min_segments: int = 2
    path_resolution: float = 0.01
    path_min_steps: int = 32
    retract: float = 0.15


@dataclass
class WorldConfig:
    obstacles: list = field(default_factory=list)
    skeleton: Skeleton = field(default_factory=Skeleton)
    attach: Attach | None = None
    gravity: tuple[float, float, float] = (0.0, 0.0, -9.81)
    base: tuple[float, float, float] = (0.0, 0.0, 0.0)
    floor_z: float | None = 0.0
