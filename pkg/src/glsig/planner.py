"""Grasp planning: sample per-gripper strategies, simulate, score, pick the best."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from glsig.grasp_graph import GLSignature, compute_signature, signatures_equal
from glsig.mppi import CostWeights, Mppi, MppiParams, goal_cost, point_cost
from glsig.sim import (
    OutOfRange,
    RejectedOverlap,
    SimError,
    SimState,
    Simulator,
    p_of_l,
)
from glsig.topology import Skeleton, TopologyError

PENALTY = 100.0
DELTA_S_CLAMP = 50.0
RESAMPLE_CAP = 10

MODES = ("full", "alternating")


class Strategy(enum.Enum):
    STAY = "STAY"
    GRASP = "GRASP"
    MOVE = "MOVE"
    RELEASE = "RELEASE"


def valid_strategies(grasping: bool) -> tuple[Strategy, ...]:
    if grasping:
        return (Strategy.STAY, Strategy.MOVE, Strategy.RELEASE)
    return (Strategy.STAY, Strategy.GRASP)


@dataclass
class GraspCandidate:
    strategies: tuple
    locations: tuple  # new location for GRASP/MOVE, else None
    index: int = 0
    feasible: bool | None = None
    result_state: SimState | None = None
    motion_plan: list = field(default_factory=list)
    cost_terms: dict = field(default_factory=dict)
    signature: GLSignature | None = None
    reason: str = ""

    def final_locations(self, state: SimState) -> list[float]:
        """Grasp locations after the change, for grasping grippers only."""
        out = []
        for g, s, l in zip(state.grippers, self.strategies, self.locations):
            if s in (Strategy.GRASP, Strategy.MOVE):
                out.append(l)
            elif s is Strategy.STAY and g.grasping:
                out.append(g.grasp_loc)
        return out

    @property
    def cost(self) -> float:
        return self.cost_terms.get("total", float("inf"))

    def describe(self) -> str:
        parts = []
        for s, l in zip(self.strategies, self.locations):
            parts.append(s.value if l is None else f"{s.value}({l:.3f})")
        return " ".join(parts)


def check_strategies(state: SimState, strategies) -> None:
    if len(strategies) != len(state.grippers):
        raise ValueError("one strategy per gripper is required")
    for i, (g, s) in enumerate(zip(state.grippers, strategies)):
        if s not in valid_strategies(g.grasping):
            raise ValueError(f"{s.value} is not valid for gripper {i} (grasping={g.grasping})")


def _result_grasps(state: SimState, strategies) -> bool:
    return any(
        s in (Strategy.GRASP, Strategy.MOVE) or (s is Strategy.STAY and g.grasping)
        for g, s in zip(state.grippers, strategies)
    )


def _sample_full(state: SimState, rng) -> tuple:
    n = len(state.grippers)
    for _ in range(RESAMPLE_CAP):
        strat = tuple(
            valid_strategies(g.grasping)[rng.integers(len(valid_strategies(g.grasping)))]
            for g in state.grippers
        )
        if _result_grasps(state, strat) and any(s is not Strategy.STAY for s in strat):
            return strat
    k = int(rng.integers(n))
    return tuple(
        (Strategy.MOVE if g.grasping else Strategy.GRASP) if i == k else Strategy.STAY
        for i, g in enumerate(state.grippers)
    )


def _sample_alternating(state: SimState, rng) -> tuple:
    """One gripper takes a new grasp; the grasping ones either hold or let go."""
    free = [i for i, g in enumerate(state.grippers) if not g.grasping]
    if free:
        k = free[int(rng.integers(len(free)))]
        return tuple(
            Strategy.GRASP if i == k
            else (Strategy.STAY if not g.grasping else (Strategy.STAY, Strategy.RELEASE)[rng.integers(2)])
            for i, g in enumerate(state.grippers)
        )
    k = int(rng.integers(len(state.grippers)))
    return tuple(
        Strategy.MOVE if i == k else (Strategy.STAY, Strategy.RELEASE)[rng.integers(2)]
        for i in range(len(state.grippers))
    )


def sample_candidates(state: SimState, n_x: int, rng_seed=0, mode: str = "full") -> list[GraspCandidate]:
    if n_x < 1:
        raise ValueError("n_x must be >= 1")
    if mode not in MODES:
        raise ValueError(f"unknown sampling mode {mode!r}")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    out = []
    for k in range(n_x):
        strat = _sample_full(state, rng) if mode == "full" else _sample_alternating(state, rng)
        locs = tuple(float(rng.uniform()) if s in (Strategy.GRASP, Strategy.MOVE) else None for s in strat)
        out.append(GraspCandidate(strat, locs, index=k))
    return out


def simulate_candidate(sim: Simulator, state: SimState, cand: GraspCandidate) -> GraspCandidate:
    """Fill in feasibility, motion plan and resulting state; never raises for infeasibility."""
    check_strategies(state, cand.strategies)
    cand.motion_plan = [None] * len(state.grippers)
    if all(s is Strategy.STAY for s in cand.strategies):
        cand.feasible = True
        cand.result_state = state
        return cand
    s = state.copy()
    for i, st in enumerate(cand.strategies):
        if st in (Strategy.RELEASE, Strategy.MOVE):
            s = sim.release(s, i, settle=False)
    s = sim.settle(s)
    for i, st in enumerate(cand.strategies):
        if st not in (Strategy.GRASP, Strategy.MOVE):
            continue
        try:
            target = p_of_l(s.rope, cand.locations[i])
        except OutOfRange as exc:
            return _infeasible(cand, str(exc))
        path = sim.plan_path(s.grippers[i], target)
        if not sim.path_clear(s.grippers[i], path):
            return _infeasible(cand, f"no clear path for gripper {i}")
        cand.motion_plan[i] = path
        try:
            s = sim.try_grasp(s, i, cand.locations[i], teleport=True, settle=False)
        except RejectedOverlap as exc:
            return _infeasible(cand, str(exc))
    if not s.grasp_locations():
        return _infeasible(cand, "no gripper grasping afterwards")
    cand.result_state = sim.settle(s)
    cand.feasible = True
    return cand


def _infeasible(cand: GraspCandidate, why: str) -> GraspCandidate:
    cand.feasible = False
    cand.result_state = None
    cand.reason = why
    return cand


class Blocklist:
    """Set of signatures, stored by canonical text so membership is multiset equality."""

    def __init__(self, entries=()):
        self._texts: list[str] = []
        for e in entries:
            self.add(e)

    def add(self, sig: GLSignature | str) -> bool:
        text = sig.text() if isinstance(sig, GLSignature) else GLSignature.parse(sig).text()
        if text in self._texts:
            return False
        self._texts.append(text)
        return True

    def __contains__(self, sig: GLSignature) -> bool:
        return sig.text() in self._texts

    def __len__(self) -> int:
        return len(self._texts)

    def texts(self) -> list[str]:
        return list(self._texts)


def state_change(a: SimState, b: SimState) -> float:
    """Norm of the stacked rope-point and gripper displacement."""
    d = np.concatenate([(b.rope.points - a.rope.points).ravel(), b.robot_q() - a.robot_q()])
    return float(np.linalg.norm(d))


@dataclass
class PlannerConfig:
    n_x: int = 50
    mode: str = "full"
    penalty: float = PENALTY
    ablation: str = "full"  # full | no_signature | always_blocklist | rollout_scored
    h_extra: int = 5

    def __post_init__(self):
        if self.n_x < 1:
            raise ValueError("n_x must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"unknown sampling mode {self.mode!r}")
        if self.ablation not in ("full", "no_signature", "always_blocklist", "rollout_scored"):
            raise ValueError(f"unknown ablation {self.ablation!r}")


def grasp_cost(cand: GraspCandidate, state: SimState, l_k: float, blocklist: Blocklist | None,
               goal_sig: GLSignature | None, skel: Skeleton, base, w: CostWeights,
               use_signature: bool = True, penalty: float = PENALTY) -> float:
    """Infeasibility, blocklist and goal-signature penalties plus geodesic and state-change terms."""
    terms = {"feasible": 0.0, "blocklist": 0.0, "goal_signature": 0.0, "geodesic": 0.0, "delta_s": 0.0}
    if not cand.feasible:
        terms["feasible"] = penalty
        geo_locs = cand.final_locations(state)
        # no resulting state to compare with: charge the largest state change
        terms["delta_s"] = w.beta1 * DELTA_S_CLAMP
    else:
        geo_locs = cand.result_state.grasp_locations()
        if use_signature and (blocklist is not None and len(blocklist) or goal_sig is not None):
            if cand.signature is None:
                cand.signature = compute_signature(cand.result_state, skel, base, l_k)
            if blocklist is not None and cand.signature in blocklist:
                terms["blocklist"] = penalty
            if goal_sig is not None and not signatures_equal(cand.signature, goal_sig):
                terms["goal_signature"] = penalty
        terms["delta_s"] = w.beta1 * min(state_change(state, cand.result_state), DELTA_S_CLAMP)
    terms["geodesic"] = float(sum(abs(l - l_k) for l in geo_locs))
    terms["total"] = sum(terms.values())
    cand.cost_terms = terms
    return terms["total"]


def _rollout_score(sim, cand, goal_p, l_k, weights, mppi_params, h_extra, seed) -> float:
    """Goal cost after ``h_extra`` extra MPPI steps from the candidate's result."""
    s = cand.result_state
    ctl = Mppi(sim, mppi_params, len(s.grippers), seed)
    cost_fn = point_cost(goal_p, weights)
    act = np.zeros((len(s.grippers), 3))
    for _ in range(h_extra):
        act = ctl.command(s, cost_fn, l_k)
        s = sim.step(s, act)
    return goal_cost(s, act, goal_p, l_k, weights)


def plan_grasp(sim: Simulator, state: SimState, l_k: float, blocklist: Blocklist | None,
               goal_sig: GLSignature | None, skel: Skeleton, base, weights: CostWeights,
               config: PlannerConfig, rng_seed=0, goal_p=None, mppi_params: MppiParams | None = None
               ) -> tuple[GraspCandidate, list[GraspCandidate]]:
    """Sample, simulate and score ``config.n_x`` candidates.

    Returns the best candidate (lowest cost, then lowest state change,
    then lowest index) and the full scored list.
    """
    cands = sample_candidates(state, config.n_x, rng_seed, config.mode)
    use_sig = config.ablation not in ("no_signature", "rollout_scored")
    for c in cands:
        simulate_candidate(sim, state, c)
        try:
            grasp_cost(c, state, l_k, blocklist, goal_sig, skel, base, weights, use_sig, config.penalty)
        except TopologyError as exc:
            # a loop grazing an obstacle loop has no trustworthy signature
            _infeasible(c, f"signature: {exc}")
            grasp_cost(c, state, l_k, None, None, skel, base, weights, False, config.penalty)
        if config.ablation == "rollout_scored" and c.feasible:
            extra = _rollout_score(sim, c, goal_p, l_k, weights, mppi_params or MppiParams(),
                                   config.h_extra, c.index)
            c.cost_terms["rollout"] = extra
            c.cost_terms["total"] += extra
    best = min(cands, key=lambda c: (c.cost, c.cost_terms.get("delta_s", 0.0), c.index))
    return best, cands


def blocklist_decision(state: SimState, best: GraspCandidate, l_0, l_k: float) -> bool:
    """True when the best plan cannot grasp closer to the keypoint than now."""
    d0 = min((abs(l - l_k) for l in l_0), default=float("inf"))
    d_star = min((abs(l - l_k) for l in best.final_locations(state)), default=float("inf"))
    return d_star >= d0
