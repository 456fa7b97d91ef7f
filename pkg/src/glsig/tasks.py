"""Task drivers: point reaching with regrasping, and threading through fixtures."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np
from matplotlib.path import Path

from glsig.grasp_graph import GLSignature, compute_signature, signatures_equal
from glsig.mppi import CostWeights, Mppi, MppiParams, TrapDetector, point_cost
from glsig.planner import Blocklist, PlannerConfig, blocklist_decision, plan_grasp
from glsig.sim import PathBlocked, SimState, Simulator, p_of_l
from glsig.topology import Skeleton, TopologyError, as_loop, loop_field


class NonPlanarLoop(TopologyError):
    pass


@dataclass
class PointGoal:
    goal_p: tuple
    goal_d: float
    l_k: float = 1.0

    def __post_init__(self):
        self.goal_p = tuple(float(x) for x in self.goal_p)
        if self.goal_d <= 0:
            raise ValueError("goal_d must be > 0")
        if not 0.0 <= self.l_k <= 1.0:
            raise ValueError("l_k must lie in [0, 1]")

    def reached(self, state: SimState) -> bool:
        return self.distance(state) < self.goal_d

    def distance(self, state: SimState) -> float:
        return float(np.linalg.norm(p_of_l(state.rope, self.l_k) - np.asarray(self.goal_p)))


@dataclass
class Subgoal:
    loop: str
    direction: int
    signature: GLSignature
    # point the keypoint is steered toward while threading this fixture;
    # defaults to just past the disc centre along the commanded direction
    through: tuple | None = None

    def __post_init__(self):
        if self.direction not in (1, -1):
            raise ValueError("direction must be +1 or -1")
        if isinstance(self.signature, str):
            self.signature = GLSignature.parse(self.signature)


@dataclass
class ThreadingPlan:
    subgoals: list
    final: PointGoal

    def validate(self, skel: Skeleton):
        prev = None
        for j, sg in enumerate(self.subgoals):
            if sg.loop not in skel.names:
                raise ValueError(f"subgoal {j} names unknown skeleton loop {sg.loop!r}")
            if sg.signature.size is not None and sg.signature.size != len(skel):
                raise ValueError(f"subgoal {j} signature has {sg.signature.size} entries, skeleton has {len(skel)}")
            col = skel.names.index(sg.loop)
            sums = np.sum(np.array(sg.signature.entries, dtype=int).reshape(-1, len(skel)), axis=0)
            if prev is None:
                if sums[col] < 1:
                    raise ValueError(f"subgoal {j} signature does not link {sg.loop!r}")
            else:
                step = sums - prev
                want = np.zeros(len(skel), dtype=int)
                want[col] = 1
                if not np.array_equal(step, want):
                    raise ValueError(
                        f"subgoal {j} is not one more linking of {sg.loop!r} than subgoal {j - 1}"
                    )
            prev = sums


@dataclass
class TrialResult:
    scenario: str
    seed: int
    success: bool
    iterations: int
    regrasps: int
    signature_history: list
    wall_time: float = 0.0
    sim_time: float = 0.0
    sim_wall_time: float = 0.0
    ablation: str = "full"
    final_distance: float | None = None
    regrasp_log: list = field(default_factory=list)
    blocklist: list = field(default_factory=list)
    subgoal_history: list = field(default_factory=list)
    penetrations: list = field(default_factory=list)
    rejected_grasps: int = 0
    deviations: int = 0
    max_strain: float = 0.0
    max_residual: float = 0.0
    params: dict = field(default_factory=dict)

    WALL_FIELDS = ("wall_time", "sim_wall_time")

    def to_record(self) -> dict:
        return asdict(self)

    def deterministic(self) -> dict:
        rec = self.to_record()
        for k in self.WALL_FIELDS:
            rec.pop(k)
        return rec


# -- magnetic field and disc crossing --------------------------------------------

def magnetic_alignment(field_vec, displacement) -> float:
    f = np.asarray(field_vec, dtype=float)
    d = np.asarray(displacement, dtype=float)
    fn = np.linalg.norm(f)
    dn = np.linalg.norm(d)
    if fn < 1e-12 or dn < 1e-12:
        return 0.0
    return float(f @ d / (fn * dn))


def magnetic_cost(rope, skel_loop, direction: int, l_k: float, displacement, w_mag: float = 1.0) -> float:
    """``w_mag * (1 - alignment)`` of the keypoint's motion with the loop's field.

    The field of the loop at p(l_k) is the per-segment sum used by the
    h-signature; ``direction`` = -1 asks for motion against it.
    """
    r = p_of_l(rope, l_k)
    f = loop_field(skel_loop, r)
    return w_mag * (1.0 - direction * magnetic_alignment(f, displacement))


def magnetic_cost_batch(skel_loop, direction: int, w_mag: float):
    """Per-step magnetic cost for MPPI rollouts, shape (M, H)."""
    loop = as_loop(skel_loop)

    def cost(r) -> np.ndarray:
        kp = r.keypoint
        prev = np.concatenate([np.broadcast_to(r.start_keypoint, (kp.shape[0], 1, 3)), kp[:, :-1]], axis=1)
        disp = kp - prev
        f = loop_field(loop, prev)
        fn = np.linalg.norm(f, axis=-1)
        dn = np.linalg.norm(disp, axis=-1)
        ok = (fn > 1e-12) & (dn > 1e-12)
        align = np.where(ok, np.einsum("mhk,mhk->mh", f, disp) / np.where(ok, fn * dn, 1.0), 0.0)
        return w_mag * (1.0 - direction * align)

    return cost


@dataclass
class DiscFrame:
    center: np.ndarray
    normal: np.ndarray
    u: np.ndarray
    v: np.ndarray
    polygon: Path


def disc_frame(skel_loop, planarity: float = 0.1) -> DiscFrame:
    """Least-squares plane of a loop, oriented so the loop runs counter-clockwise about the normal."""
    loop = as_loop(skel_loop)
    c = loop.mean(axis=0)
    _, sv, vt = np.linalg.svd(loop - c)
    n = vt[2]
    area = np.sum(np.cross(loop - c, np.roll(loop, -1, axis=0) - c), axis=0)
    if area @ n < 0:
        n = -n
    u = vt[0]
    v = np.cross(n, u)
    resid = np.abs((loop - c) @ n).max()
    diam = np.ptp(loop, axis=0).max()
    if resid >= planarity * diam:
        raise NonPlanarLoop(f"loop deviates {resid:.3f} m from its plane (diameter {diam:.3f} m)")
    poly = Path(np.stack([(loop - c) @ u, (loop - c) @ v], axis=1), closed=False)
    return DiscFrame(c, n, u, v, poly)


def disc_penetration(rope_prev, rope_now, skel_loop, direction: int, l_k: float) -> bool:
    """Did p(l_k) cross the loop's disc, moving along ``direction`` times its normal?"""
    fr = skel_loop if isinstance(skel_loop, DiscFrame) else disc_frame(skel_loop)
    a = p_of_l(rope_prev, l_k)
    b = p_of_l(rope_now, l_k)
    sa = float((a - fr.center) @ fr.normal) * direction
    sb = float((b - fr.center) @ fr.normal) * direction
    if not (sa < 0.0 <= sb):
        return False
    t = sa / (sa - sb)
    x = a + t * (b - a) - fr.center
    return bool(fr.polygon.contains_point((x @ fr.u, x @ fr.v)))


# -- trial bookkeeping ----------------------------------------------------------------

class _Trial:
    """Shared state of one driver run: monitors, signature log, timers."""

    def __init__(self, sim: Simulator, skel: Skeleton, base, scenario: str, seed: int, ablation: str):
        self.sim = sim
        self.skel = skel
        self.base = base
        self.t0 = time.perf_counter()
        self.sim_wall = 0.0
        self.steps = -1  # the drivers observe the initial state, which is not a step
        self.max_strain = 0.0
        self.max_residual = 0.0
        self.history: list = []
        self.result = TrialResult(scenario, seed, False, 0, 0, self.history, ablation=ablation)

    def observe(self, state: SimState):
        self.steps += 1
        self.max_strain = max(self.max_strain, state.rope.strain())
        self.max_residual = max(self.max_residual, self.sim.constraint_residual(state))

    def step(self, state: SimState, action) -> SimState:
        t = time.perf_counter()
        state = self.sim.step(state, action)
        self.sim_wall += time.perf_counter() - t
        self.observe(state)
        return state

    def execute(self, state: SimState, cand) -> tuple[SimState, bool]:
        t = time.perf_counter()
        ok = True
        try:
            state = self.sim.execute_grasp_change(state, cand, on_step=self.observe)
        except PathBlocked as exc:
            state = exc.state
            ok = False
        self.sim_wall += time.perf_counter() - t
        return state, ok

    def signature(self, state: SimState, l_k: float) -> GLSignature | None:
        if not state.grasp_locations() and not state.attach:
            return GLSignature((), len(self.skel))
        try:
            return compute_signature(state, self.skel, self.base, l_k)
        except TopologyError:
            return None

    def log_signature(self, iteration: int, state: SimState, l_k: float) -> GLSignature | None:
        sig = self.signature(state, l_k)
        if sig is not None and (not self.history or self.history[-1][1] != sig.text()):
            self.history.append((iteration, sig.text()))
        return sig

    def finish(self, iterations: int, success: bool) -> TrialResult:
        r = self.result
        r.iterations = iterations
        r.success = success
        r.wall_time = time.perf_counter() - self.t0
        r.sim_time = self.steps * self.sim.params.dt
        r.sim_wall_time = self.sim_wall
        r.max_strain = self.max_strain
        r.max_residual = self.max_residual
        return r


@dataclass
class RunConfig:
    """Everything a driver needs besides the state and the goal."""

    skel: Skeleton
    base: tuple
    weights: CostWeights = field(default_factory=CostWeights)
    mppi: MppiParams = field(default_factory=MppiParams)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    scenario: str = "scenario"


def _plan_seed(seed: int, k: int) -> int:
    return int(seed) * 1_000_003 + 7919 * k


# -- point reaching --------------------------------------------------------------------

def point_reaching(sim: Simulator, state: SimState, goal: PointGoal, cfg: RunConfig, i_max: int,
                   seed: int = 0, blocklist: Blocklist | None = None) -> TrialResult:
    """MPPI toward the goal; on a trap, regrasp and possibly blocklist the signature."""
    ablation = cfg.planner.ablation
    tr = _Trial(sim, cfg.skel, cfg.base, cfg.scenario, seed, ablation)
    blocklist = Blocklist() if blocklist is None else blocklist
    res = tr.result
    tr.observe(state)
    tr.log_signature(0, state, goal.l_k)
    if goal.reached(state) or i_max <= 0:
        res.final_distance = goal.distance(state)
        return tr.finish(0, goal.reached(state))

    ctl = Mppi(sim, cfg.mppi, len(state.grippers), seed)
    trap = TrapDetector(cfg.mppi.window, cfg.mppi.theta)
    cost_fn = point_cost(goal.goal_p, cfg.weights)
    n_plans = 0
    success = False
    i = 0
    for i in range(1, i_max + 1):
        if state.grasp_locations():
            act = ctl.command(state, cost_fn, goal.l_k)
            state = tr.step(state, act)
            trapped = trap.update(state.robot_q())
        else:
            trapped = True  # nothing to push with: plan a grasp right away
        tr.log_signature(i, state, goal.l_k)
        if goal.reached(state):
            success = True
            break
        if not trapped:
            continue

        l0 = state.grasp_locations()
        best, _ = plan_grasp(sim, state, goal.l_k, blocklist, None, cfg.skel, cfg.base, cfg.weights,
                             cfg.planner, _plan_seed(seed, n_plans), goal.goal_p, cfg.mppi)
        n_plans += 1
        blocked_sig = None
        if l0 and (ablation == "always_blocklist" or blocklist_decision(state, best, l0, goal.l_k)):
            blocked_sig = tr.signature(state, goal.l_k)
            if blocked_sig is not None:
                blocklist.add(blocked_sig)
            best, _ = plan_grasp(sim, state, goal.l_k, blocklist, None, cfg.skel, cfg.base, cfg.weights,
                                 cfg.planner, _plan_seed(seed, n_plans), goal.goal_p, cfg.mppi)
            n_plans += 1
        entry = {
            "iteration": i,
            "d0": min((abs(l - goal.l_k) for l in l0), default=None),
            "d_star": min((abs(l - goal.l_k) for l in best.final_locations(state)), default=None),
            "blocklisted": None if blocked_sig is None else blocked_sig.text(),
            "candidate": best.describe(),
            "cost": best.cost,
            "executed": False,
        }
        if best.feasible:
            state, ok = tr.execute(state, best)
            entry["executed"] = True
            entry["completed"] = ok
            entry["locations"] = state.grasp_locations()
            res.regrasps += 1
        res.regrasp_log.append(entry)
        ctl.reset()
        trap.reset_window()
        after = tr.log_signature(i, state, goal.l_k)
        entry["signature"] = None if after is None else after.text()
        if goal.reached(state):
            success = True
            break

    res.blocklist = blocklist.texts()
    res.final_distance = goal.distance(state)
    res.final_state = state  # not a dataclass field, so never serialized
    return tr.finish(i, success)


# -- threading --------------------------------------------------------------------------

def _through_point(frame: DiscFrame, sg: Subgoal, depth: float = 0.15) -> np.ndarray:
    if sg.through is not None:
        return np.asarray(sg.through, dtype=float)
    return frame.center + sg.direction * depth * frame.normal


def threading(sim: Simulator, state: SimState, plan: ThreadingPlan, cfg: RunConfig, i_max: int,
              seed: int = 0) -> TrialResult:
    """Thread the rope through the plan's fixtures in order, then reach the final goal.

    The keypoint while threading is the tip; on disc penetration a grasp
    near the tip is planned and kept only if it yields the subgoal
    signature.  When stuck, a grasp slightly down the rope is planned.
    """
    plan.validate(cfg.skel)
    tr = _Trial(sim, cfg.skel, cfg.base, cfg.scenario, seed, cfg.planner.ablation)
    res = tr.result
    final = plan.final
    tip = 1.0
    frames = [disc_frame(cfg.skel.loop(sg.loop)) for sg in plan.subgoals]
    res.penetrations = [0] * len(plan.subgoals)
    tr.observe(state)
    tr.log_signature(0, state, tip)

    ctl = Mppi(sim, cfg.mppi, len(state.grippers), seed)
    trap = TrapDetector(cfg.mppi.window, cfg.mppi.theta)
    n_plans = 0
    j = 0
    success = False

    def subgoal_cost(jj):
        sg = plan.subgoals[jj]
        loop = cfg.skel.loop(sg.loop)
        base_cost = point_cost(_through_point(frames[jj], sg), cfg.weights)
        mag = magnetic_cost_batch(loop, sg.direction, cfg.weights.w_mag)
        return lambda r: base_cost(r) + mag(r)

    def advance_if_matched(i, sig):
        nonlocal j, cost_fn
        if j < len(plan.subgoals) and sig is not None and signatures_equal(sig, plan.subgoals[j].signature):
            res.subgoal_history.append((i, j, sig.text()))
            j += 1
            ctl.reset()
            trap.reset_window()
            cost_fn = subgoal_cost(j) if j < len(plan.subgoals) else point_cost(final.goal_p, cfg.weights)

    def regrasp(i, l_k, goal_sig, why):
        nonlocal state, n_plans
        cfg_alt = PlannerConfig(cfg.planner.n_x, "alternating", cfg.planner.penalty, cfg.planner.ablation,
                                cfg.planner.h_extra)
        best, _ = plan_grasp(sim, state, l_k, None, goal_sig, cfg.skel, cfg.base, cfg.weights, cfg_alt,
                             _plan_seed(seed, n_plans), None, cfg.mppi)
        n_plans += 1
        entry = {"iteration": i, "why": why, "l_k": l_k, "candidate": best.describe(), "cost": best.cost,
                 "executed": False}
        matches = best.feasible and (goal_sig is None or (
            best.signature is not None and signatures_equal(best.signature, goal_sig)))
        if why == "penetration" and not matches:
            res.rejected_grasps += 1
            entry["rejected"] = True
        elif best.feasible:
            state, ok = tr.execute(state, best)
            res.regrasps += 1
            entry["executed"] = True
            entry["completed"] = ok
            after = tr.signature(state, tip)
            entry["signature"] = None if after is None else after.text()
            if goal_sig is not None and (after is None or not signatures_equal(after, goal_sig)):
                res.deviations += 1
                entry["deviation"] = True
        res.regrasp_log.append(entry)
        ctl.reset()
        trap.reset_window()

    cost_fn = subgoal_cost(0) if plan.subgoals else point_cost(final.goal_p, cfg.weights)
    advance_if_matched(0, tr.signature(state, tip))
    i = 0
    for i in range(1, i_max + 1):
        if j < len(plan.subgoals):
            sg = plan.subgoals[j]
            prev = state
            if state.grasp_locations():
                act = ctl.command(state, cost_fn, tip)
                state = tr.step(state, act)
                trapped = trap.update(state.robot_q())
            else:
                trapped = True
            if disc_penetration(prev.rope, state.rope, frames[j], sg.direction, tip):
                res.penetrations[j] += 1
                regrasp(i, tip, sg.signature, "penetration")
            elif trapped:
                held = state.grasp_locations()
                l_k = max(0.0, (max(held) if held else tip) - 0.05)
                regrasp(i, l_k, sg.signature, "trapped")
            advance_if_matched(i, tr.log_signature(i, state, tip))
        else:
            if state.grasp_locations():
                act = ctl.command(state, cost_fn, final.l_k)
                state = tr.step(state, act)
                trapped = trap.update(state.robot_q())
            else:
                trapped = True
            tr.log_signature(i, state, final.l_k)
            if final.reached(state):
                success = True
                break
            if trapped:
                regrasp(i, final.l_k, plan.subgoals[-1].signature if plan.subgoals else None, "trapped")

    res.final_distance = final.distance(state)
    res.final_state = state  # not a dataclass field, so never serialized
    return tr.finish(i, success)
