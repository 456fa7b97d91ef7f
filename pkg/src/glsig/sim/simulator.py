from __future__ import annotations

import math
from dataclasses import replace

import numpy as np

from glsig.sim import kernels
from glsig.sim.state import (
    Box,
    Capsule,
    GripperState,
    SimError,
    SimParams,
    SimState,
    WorldConfig,
    l_to_index,
    p_of_l,
)


class ExcessVelocity(SimError, ValueError):
    pass


class OutOfReach(SimError):
    pass


class RejectedOverlap(SimError):
    pass


class NotGrasping(SimError):
    pass


class PathBlocked(SimError):
    def __init__(self, msg, state=None):
        super().__init__(msg)
        self.state = state


def _obstacle_arrays(obstacles):
    boxes = [np.r_[o.lo, o.hi] for o in obstacles if isinstance(o, Box)]
    caps = [np.r_[o.a, o.b, o.radius] for o in obstacles if isinstance(o, Capsule)]
    boxes = np.array(boxes, dtype=float).reshape(-1, 6)
    caps = np.array(caps, dtype=float).reshape(-1, 7)
    return boxes, caps


class Simulator:
    """Quasi-static rope world with floating grippers.

    The simulator holds only configuration; every method takes a
    :class:`SimState` and returns a new one, so one instance can serve any
    number of independent rollouts.
    """

    def __init__(self, world: WorldConfig, params: SimParams | None = None):
        self.world = world
        self.params = params or SimParams()
        self.base = np.asarray(world.base, dtype=float)
        self.boxes, self.caps = _obstacle_arrays(world.obstacles)

    # -- packing ---------------------------------------------------------
    def _prm(self, rope) -> np.ndarray:
        p = self.params
        prm = np.zeros(kernels.N_PRM)
        prm[kernels.P_DT] = p.dt
        prm[kernels.P_DAMPING] = p.damping
        prm[kernels.P_ITERS] = p.iterations
        prm[kernels.P_REST] = rope.rest_len
        prm[kernels.P_ROPE_R] = p.rope_radius
        prm[kernels.P_GRIP_R] = p.gripper_radius
        prm[kernels.P_ARM_R] = p.arm_radius
        prm[kernels.P_REACH] = p.reach
        prm[kernels.P_FLOOR] = -1e9 if self.world.floor_z is None else self.world.floor_z
        prm[kernels.P_STRAIN] = p.strain_limit
        prm[kernels.P_TOL] = p.contact_tol
        prm[kernels.P_GX:kernels.P_GZ + 1] = self.world.gravity
        return prm

    def anchor(self, gripper: GripperState) -> np.ndarray:
        return self.base if gripper.shoulder is None else gripper.shoulder

    def _pack(self, state: SimState):
        n = state.rope.n
        grasping = np.array([1 if g.grasping else 0 for g in state.grippers], dtype=np.int64)
        gidx = np.zeros(len(state.grippers), dtype=np.int64)
        gw = np.zeros(len(state.grippers))
        for k, g in enumerate(state.grippers):
            if g.grasping:
                gidx[k], gw[k] = l_to_index(n, g.grasp_loc)
        anchors = np.array([self.anchor(g) for g in state.grippers], dtype=float).reshape(-1, 3)
        att_idx = np.array([0 if a.loc == 0.0 else n - 1 for a in state.attach], dtype=np.int64)
        att_pos = np.array([a.point for a in state.attach], dtype=float).reshape(-1, 3)
        gpos = np.array([g.position for g in state.grippers], dtype=float).reshape(-1, 3)
        return gpos, grasping, gidx, gw, anchors, att_idx, att_pos

    # -- dynamics --------------------------------------------------------
    def step(self, state: SimState, action, dt: float | None = None) -> SimState:
        """Move grippers by ``action`` (G, 3) m/s and relax the rope."""
        new, _ = self.step_with_info(state, action, dt)
        return new

    def step_with_info(self, state: SimState, action, dt: float | None = None):
        action = np.asarray(action, dtype=float).reshape(len(state.grippers), 3)
        speed = np.linalg.norm(action, axis=1)
        if np.any(speed > self.params.v_max * (1 + 1e-9)):
            raise ExcessVelocity(f"gripper speed {speed.max():.3f} exceeds v_max={self.params.v_max}")
        prm = self._prm(state.rope)
        if dt is not None:
            prm[kernels.P_DT] = dt
        gpos, grasping, gidx, gw, anchors, att_idx, att_pos = self._pack(state)
        x, v, g, ncon, blocked = kernels.step(
            state.rope.points, state.rope.vel, gpos, action, grasping, gidx, gw, anchors,
            att_idx, att_pos, prm, self.boxes, self.caps,
        )
        new = state.copy()
        new.rope.points = x
        new.rope.vel = v
        for k, gr in enumerate(new.grippers):
            gr.position = g[k].copy()
        new.contacts = int(ncon)
        new.time = state.time + prm[kernels.P_DT]
        return new, blocked

    def settle(self, state: SimState, steps: int | None = None, on_step=None) -> SimState:
        zero = np.zeros((len(state.grippers), 3))
        for _ in range(self.params.settle_steps if steps is None else steps):
            state = self.step(state, zero)
            if on_step is not None:
                on_step(state)
        return state

    def rollout(self, state: SimState, actions: np.ndarray, keypoint: float):
        """Batched rollouts; ``actions`` is (M, H, G, 3).

        Returns keypoint positions (M, H, 3), gripper positions
        (M, H, G, 3) and contact counts (M, H).
        """
        gpos, grasping, gidx, gw, anchors, att_idx, att_pos = self._pack(state)
        kidx, kw = l_to_index(state.rope.n, keypoint)
        return kernels.rollout(
            state.rope.points, state.rope.vel, gpos, np.ascontiguousarray(actions, dtype=float),
            grasping, gidx, gw, anchors, att_idx, att_pos, self._prm(state.rope), self.boxes,
            self.caps, kidx, kw,
        )

    # -- geometry queries ------------------------------------------------
    def pose_blocked(self, position, gripper: GripperState) -> bool:
        return bool(kernels.pose_blocked(
            np.asarray(position, dtype=float), self.anchor(gripper),
            self.params.gripper_radius, self.params.arm_radius, self.boxes, self.caps,
        ))

    def reachable(self, position, gripper: GripperState) -> bool:
        return float(np.linalg.norm(np.asarray(position) - self.anchor(gripper))) <= self.params.reach + 1e-9

    def l_min(self, state: SimState) -> float:
        return self.params.l_min_segments / (state.rope.n - 1)

    def plan_path(self, gripper: GripperState, target) -> np.ndarray:
        """Retract along the arm towards its anchor, then go straight to ``target``."""
        anchor = self.anchor(gripper)
        start = gripper.position
        target = np.asarray(target, dtype=float)
        arm = start - anchor
        dist = float(np.linalg.norm(arm))
        waypoints = [start]
        if dist > self.params.retract + 1e-9:
            waypoints.append(anchor + arm * (self.params.retract / dist))
        waypoints.append(target)
        pts = [waypoints[0]]
        for w in waypoints[1:]:
            if np.linalg.norm(w - pts[-1]) > 1e-9:
                pts.append(w)
        if len(pts) == 1:
            pts.append(target)
        return np.array(pts)

    def path_samples(self, path: np.ndarray) -> np.ndarray:
        out = [path[:1]]
        for a, b in zip(path[:-1], path[1:]):
            n = max(self.params.path_min_steps, math.ceil(np.linalg.norm(b - a) / self.params.path_resolution))
            t = np.arange(1, n + 1)[:, None] / n
            out.append(a + t * (b - a))
        return np.vstack(out)

    def path_clear(self, gripper: GripperState, path: np.ndarray) -> bool:
        for q in self.path_samples(path):
            if not self.reachable(q, gripper) or self.pose_blocked(q, gripper):
                return False
        return True

    # -- grasping --------------------------------------------------------
    def _check_overlap(self, state: SimState, idx: int, l: float):
        lmin = self.l_min(state)
        for k, g in enumerate(state.grippers):
            if k != idx and g.grasping and abs(g.grasp_loc - l) < lmin - 1e-12:
                raise RejectedOverlap(
                    f"grasp at l={l:.3f} within {lmin:.3f} of gripper {k} at l={g.grasp_loc:.3f}"
                )
        for a in state.attach:
            if abs(a.loc - l) < lmin - 1e-12:
                raise RejectedOverlap(f"grasp at l={l:.3f} within {lmin:.3f} of the attach point at l={a.loc:.3f}")

    def try_grasp(self, state: SimState, idx: int, l: float, teleport: bool = False,
                  settle: bool = True) -> SimState:
        g = state.grippers[idx]
        if g.grasping:
            raise SimError(f"gripper {idx} is already grasping")
        target = p_of_l(state.rope, l)
        if not teleport and np.linalg.norm(g.position - target) > self.params.grasp_radius:
            raise OutOfReach(
                f"gripper {idx} is {np.linalg.norm(g.position - target):.3f} m from p({l:.3f})"
            )
        self._check_overlap(state, idx, l)
        new = state.copy()
        gr = new.grippers[idx]
        # the fingers close onto the rope: the last few millimetres are taken
        # up by the gripper, not by yanking the rope
        if teleport or not self.pose_blocked(target, gr):
            gr.position = target.copy()
        gr.grasping = True
        gr.grasp_loc = float(l)
        return self.settle(new) if settle else new

    def release(self, state: SimState, idx: int, settle: bool = True) -> SimState:
        if not state.grippers[idx].grasping:
            raise NotGrasping(f"gripper {idx} is not grasping")
        new = state.copy()
        new.grippers[idx] = replace(new.grippers[idx], grasping=False, grasp_loc=None)
        # quasi-static release: the rope does not keep the momentum of the pull
        new.rope.vel = np.zeros_like(new.rope.vel)
        return self.settle(new) if settle else new

    def move_along(self, state: SimState, idx: int, path: np.ndarray, on_step=None) -> SimState:
        """Drive one gripper along a polyline at ``v_max``; other grippers hold still."""
        step_len = self.params.v_max * self.params.dt
        for a, b in zip(path[:-1], path[1:]):
            seg = b - a
            length = float(np.linalg.norm(seg))
            if length < 1e-12:
                continue
            n = math.ceil(length / step_len - 1e-9)
            for k in range(1, n + 1):
                goal = a + seg * (k / n)
                delta = goal - state.grippers[idx].position
                action = np.zeros((len(state.grippers), 3))
                action[idx] = delta / self.params.dt
                sp = np.linalg.norm(action[idx])
                if sp > self.params.v_max:
                    action[idx] *= self.params.v_max / sp
                state, blocked = self.step_with_info(state, action)
                if on_step is not None:
                    on_step(state)
                if blocked[idx]:
                    raise PathBlocked(f"gripper {idx} blocked at {state.grippers[idx].position}", state)
        return state

    def execute_grasp_change(self, state: SimState, cand, on_step=None) -> SimState:
        """Carry out a planned grasp change: releases first, then moves, then grasps."""
        from glsig.planner import Strategy

        if not cand.feasible:
            raise SimError("cannot execute an infeasible grasp candidate")
        if all(s is Strategy.STAY for s in cand.strategies):
            return state
        for i, s in enumerate(cand.strategies):
            if s in (Strategy.RELEASE, Strategy.MOVE):
                state = self.release(state, i, settle=False)
        state = self.settle(state, on_step=on_step)
        for i, s in enumerate(cand.strategies):
            if s not in (Strategy.MOVE, Strategy.GRASP):
                continue
            state = self.move_along(state, i, cand.motion_plan[i], on_step=on_step)
            state = self._approach(state, i, cand.locations[i], on_step)
            try:
                state = self.try_grasp(state, i, cand.locations[i], settle=False)
            except OutOfReach as exc:
                raise PathBlocked(str(exc), state) from exc
        return self.settle(state, on_step=on_step)

    def _approach(self, state: SimState, idx: int, l: float, on_step=None, max_steps: int = 20) -> SimState:
        """Close the gap to p(l) if the rope drifted while the gripper travelled."""
        for _ in range(max_steps):
            gap = p_of_l(state.rope, l) - state.grippers[idx].position
            if np.linalg.norm(gap) <= 0.5 * self.params.grasp_radius:
                break
            action = np.zeros((len(state.grippers), 3))
            action[idx] = gap / self.params.dt
            sp = np.linalg.norm(action[idx])
            if sp > self.params.v_max:
                action[idx] *= self.params.v_max / sp
            state, blocked = self.step_with_info(state, action)
            if on_step is not None:
                on_step(state)
            if blocked[idx]:
                raise PathBlocked(f"gripper {idx} blocked while approaching p({l:.3f})", state)
        return state

    # -- diagnostics -----------------------------------------------------
    def constraint_residual(self, state: SimState) -> float:
        worst = 0.0
        for g in state.grippers:
            if g.grasping:
                worst = max(worst, float(np.linalg.norm(g.position - p_of_l(state.rope, g.grasp_loc))))
        for a in state.attach:
            worst = max(worst, float(np.linalg.norm(np.asarray(a.point) - p_of_l(state.rope, a.loc))))
        return worst
