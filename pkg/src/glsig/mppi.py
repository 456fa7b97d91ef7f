"""Sampling-based MPC over gripper velocities, plus trap detection."""

from __future__ import annotations

from collections import deque
from dataclasses import asdict, dataclass, field

import numpy as np

from glsig.sim import SimState, Simulator, p_of_l


@dataclass
class MppiParams:
    horizon: int = 15
    samples: int = 64
    noise_sigma: float = 0.05
    temperature: float = 0.05
    dt: float = 0.05
    window: int = 20
    theta: float = 0.25

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.samples < 2:
            raise ValueError("samples must be >= 2")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.window < 2:
            raise ValueError("trap window must be >= 2")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class CostWeights:
    alpha1: float = 1.0  # grasped points toward the goal
    alpha2: float = 2.0  # sqrt(contacts)
    alpha3: float = 0.05  # action magnitude
    beta1: float = 1.0  # state change in the grasp cost
    w_mag: float = 1.0  # magnetic-field alignment while threading

    def __post_init__(self):
        for k, v in asdict(self).items():
            if v < 0:
                raise ValueError(f"cost weight {k} must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


def goal_cost(state: SimState, qdot, goal_p, l_k: float, w: CostWeights) -> float:
    """Keypoint distance, grasped-point distances, contacts and action size."""
    goal_p = np.asarray(goal_p, dtype=float)
    c = float(np.linalg.norm(p_of_l(state.rope, l_k) - goal_p))
    for g in state.grippers:
        if g.grasping:
            c += w.alpha1 * float(np.linalg.norm(p_of_l(state.rope, g.grasp_loc) - goal_p))
    c += w.alpha2 * np.sqrt(state.contacts)
    c += w.alpha3 * float(np.linalg.norm(np.asarray(qdot, dtype=float)))
    return c


@dataclass
class Rollouts:
    """Traces of a batch of rollouts; ``M`` samples by ``H`` steps."""

    actions: np.ndarray  # (M, H, G, 3)
    keypoint: np.ndarray  # (M, H, 3)
    grippers: np.ndarray  # (M, H, G, 3)
    contacts: np.ndarray  # (M, H)
    grasping: np.ndarray  # (G,) bool
    start_keypoint: np.ndarray  # (3,)


def point_cost(goal_p, w: CostWeights):
    """Per-step goal cost for a batch of rollouts, shape (M, H).

    A grasped point is pinned to its gripper, so the gripper trace stands
    in for p(l_i).
    """
    goal_p = np.asarray(goal_p, dtype=float)

    def cost(r: Rollouts) -> np.ndarray:
        c = np.linalg.norm(r.keypoint - goal_p, axis=-1)
        if np.any(r.grasping):
            d = np.linalg.norm(r.grippers[:, :, r.grasping] - goal_p, axis=-1)
            c = c + w.alpha1 * d.sum(axis=-1)
        c = c + w.alpha2 * np.sqrt(r.contacts)
        c = c + w.alpha3 * np.linalg.norm(r.actions.reshape(*r.actions.shape[:2], -1), axis=-1)
        return c

    return cost


def softmin_weights(costs: np.ndarray, temperature: float) -> np.ndarray:
    z = -(costs - costs.min()) / temperature
    w = np.exp(z)
    return w / w.sum()


def clip_speed(actions: np.ndarray, v_max: float) -> np.ndarray:
    speed = np.linalg.norm(actions, axis=-1, keepdims=True)
    scale = np.minimum(1.0, v_max / np.maximum(speed, 1e-12))
    return actions * scale


class Mppi:
    """MPPI with a time-shifted nominal sequence.

    Only grasping grippers are perturbed: a free gripper cannot change the
    rope, so its noise would only add variance.
    """

    def __init__(self, sim: Simulator, params: MppiParams, n_grippers: int, seed: int = 0):
        self.sim = sim
        self.params = params
        self.rng = np.random.default_rng(seed)
        self.nominal = np.zeros((params.horizon, n_grippers, 3))
        self.last_weights = None
        self.last_costs = None

    def reset(self):
        self.nominal[:] = 0.0

    def sample(self, state: SimState) -> np.ndarray:
        p = self.params
        g = self.nominal.shape[1]
        noise = self.rng.normal(0.0, 1.0, (p.samples, p.horizon, g, 3)) * p.noise_sigma
        mask = np.array([gr.grasping for gr in state.grippers], dtype=float)[None, None, :, None]
        return clip_speed(self.nominal[None] + noise * mask, self.sim.params.v_max)

    def command(self, state: SimState, cost_fn, keypoint: float) -> np.ndarray:
        """Return the first action of the updated nominal sequence, then shift it."""
        actions = self.sample(state)
        kp, gp, nc = self.sim.rollout(state, actions, keypoint)
        grasping = np.array([g.grasping for g in state.grippers])
        traces = Rollouts(actions, kp, gp, nc, grasping, p_of_l(state.rope, keypoint))
        costs = cost_fn(traces).sum(axis=1)
        w = softmin_weights(costs, self.params.temperature)
        self.last_costs, self.last_weights = costs, w
        self.nominal = clip_speed(np.einsum("m,mhgk->hgk", w, actions), self.sim.params.v_max)
        act = self.nominal[0].copy()
        self.nominal[:-1] = self.nominal[1:]
        self.nominal[-1] = 0.0
        return act


def mppi_step(sim: Simulator, state: SimState, cost_fn, params: MppiParams, rng_seed: int,
              keypoint: float = 1.0, nominal=None) -> np.ndarray:
    """One-shot MPPI call with a fresh controller."""
    ctl = Mppi(sim, params, len(state.grippers), rng_seed)
    if nominal is not None:
        ctl.nominal = np.array(nominal, dtype=float)
    return ctl.command(state, cost_fn, keypoint)


@dataclass
class TrapDetector:
    """Windowed progress ratio against its running maximum over the trial."""

    window: int = 20
    theta: float = 0.25
    eps: float = 1e-6
    qbar_max: float = 0.0
    history: deque = field(default_factory=deque)
    last_ratio: float | None = None

    def reset_window(self):
        """Forget recent states (after a grasp change); the running max is kept."""
        self.history.clear()
        self.last_ratio = None

    def update(self, q) -> bool:
        self.history.append(np.asarray(q, dtype=float).copy())
        while len(self.history) > self.window:
            self.history.popleft()
        if len(self.history) < self.window:
            return False
        qbar = float(np.linalg.norm(self.history[-1] - self.history[0])) / self.window
        self.qbar_max = max(self.qbar_max, qbar)
        self.last_ratio = qbar / max(self.qbar_max, self.eps)
        return self.last_ratio < self.theta


def trap_update(det: TrapDetector, q) -> tuple[TrapDetector, bool]:
    trapped = det.update(q)
    return det, trapped
