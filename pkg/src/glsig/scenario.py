"""Scenario files (YAML) and result records (JSON lines).

A scenario fully determines a batch of trials: world, rope, grippers,
task, controller and planner parameters, ablation and seed list.
Loading resolves every default, and :meth:`Scenario.to_dict` echoes the
resolved values, so ``load_scenario(dump_scenario(s)) == s``.
All lengths are metres and all times seconds.
"""

from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from glsig.grasp_graph import GLSignature
from glsig.mppi import CostWeights, MppiParams
from glsig.planner import PlannerConfig
from glsig.sim import (
    Attach,
    Box,
    Capsule,
    GripperState,
    RopeState,
    SimParams,
    SimState,
    Simulator,
    WorldConfig,
    p_of_l,
)
from glsig.tasks import PointGoal, RunConfig, Subgoal, ThreadingPlan, TrialResult, point_reaching, threading
from glsig.topology import Skeleton, TopologyError

UNITS = {"length": "m", "time": "s"}
ABLATIONS = ("full", "no_signature", "always_blocklist", "rollout_scored")
SEGMENT_TOL = 0.01

SCENARIO_DIR = Path(__file__).parent / "scenarios"


class ScenarioError(ValueError):
    pass


class ParseError(ScenarioError):
    def __init__(self, msg, line=None, field=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        super().__init__(f"{', '.join(where)}: {msg}" if where else msg)
        self.line = line
        self.field = field


class ValidationError(ScenarioError):
    def __init__(self, msg, field=None):
        super().__init__(f"{field}: {msg}" if field else msg)
        self.field = field


# -- helpers ----------------------------------------------------------------------------------

def _vec(x, name, n=3) -> list[float]:
    try:
        arr = np.asarray(x, dtype=float)
    except (TypeError, ValueError):
        raise ValidationError(f"expected {n} numbers, got {x!r}", name) from None
    if arr.shape != (n,) or not np.all(np.isfinite(arr)):
        raise ValidationError(f"expected {n} finite numbers, got {x!r}", name)
    return [float(v) for v in arr]


def _points(x, name) -> np.ndarray:
    try:
        arr = np.asarray(x, dtype=float)
    except (TypeError, ValueError):
        raise ValidationError("expected a list of 3D points", name) from None
    if arr.ndim != 2 or arr.shape[1] != 3 or len(arr) < 2 or not np.all(np.isfinite(arr)):
        raise ValidationError("expected a list of at least two 3D points", name)
    return arr


def _dataclass_from(cls, data, name):
    data = data or {}
    if not isinstance(data, dict):
        raise ValidationError("expected a mapping", name)
    known = {f.name for f in fields(cls)}
    extra = set(data) - known
    if extra:
        raise ValidationError(f"unknown keys {sorted(extra)}; expected some of {sorted(known)}", name)
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ValidationError(str(exc), name) from None


def resample_polyline(waypoints, n: int) -> np.ndarray:
    """``n`` points evenly spaced by arc length along a polyline."""
    w = np.asarray(waypoints, dtype=float)
    s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(w, axis=0), axis=1))])
    t = np.linspace(0.0, s[-1], n)
    return np.stack([np.interp(t, s, w[:, k]) for k in range(3)], axis=1)


def _round(x):
    """Plain python floats rounded for stable text output."""
    if isinstance(x, np.ndarray):
        x = x.tolist()
    if isinstance(x, float):
        return round(x, 12)
    if isinstance(x, (list, tuple)):
        return [_round(v) for v in x]
    if isinstance(x, dict):
        return {k: _round(v) for k, v in x.items()}
    return x


# -- scenario ----------------------------------------------------------------------------------

@dataclass
class GripperSpec:
    position: list
    shoulder: list | None = None
    grasp: float | None = None

    def to_dict(self):
        return {"position": self.position, "shoulder": self.shoulder, "grasp": self.grasp}


@dataclass
class Variation:
    """Per-seed perturbation of the initial configuration."""

    rope_jitter: float = 0.0  # sd of horizontal noise added to the rope waypoints
    gripper_jitter: float = 0.0  # sd of noise added to free gripper positions
    settle_steps: int = 20

    def __post_init__(self):
        if self.rope_jitter < 0 or self.gripper_jitter < 0 or self.settle_steps < 0:
            raise ValueError("variation magnitudes must be non-negative")


@dataclass
class Scenario:
    name: str
    world: WorldConfig
    sim: SimParams
    rope_waypoints: np.ndarray
    rope_n: int
    attach_loc: float | None
    grippers: list
    task: str
    goal: PointGoal
    subgoals: list = field(default_factory=list)
    i_max: int = 500
    mppi: MppiParams = field(default_factory=MppiParams)
    weights: CostWeights = field(default_factory=CostWeights)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    ablation: str = "full"
    seeds: list = field(default_factory=lambda: [0])
    variation: Variation = field(default_factory=Variation)

    # -- serialization --------------------------------------------------------------
    def to_dict(self) -> dict:
        obstacles = []
        for ob in self.world.obstacles:
            if isinstance(ob, Box):
                obstacles.append({"box": {"lo": ob.lo.tolist(), "hi": ob.hi.tolist()}})
            else:
                obstacles.append({"capsule": {"a": ob.a.tolist(), "b": ob.b.tolist(), "radius": ob.radius}})
        task = {"type": self.task, "i_max": self.i_max,
                "goal": {"p": list(self.goal.goal_p), "d": self.goal.goal_d, "l_k": self.goal.l_k}}
        if self.task == "threading":
            task["subgoals"] = [
                {"loop": sg.loop, "direction": sg.direction, "signature": sg.signature.text(),
                 "through": None if sg.through is None else list(sg.through)}
                for sg in self.subgoals
            ]
        planner = asdict(self.planner)
        planner.pop("ablation")
        return _round({
            "name": self.name,
            "units": dict(UNITS),
            "world": {
                "base": list(self.world.base),
                "floor_z": self.world.floor_z,
                "gravity": list(self.world.gravity),
                "obstacles": obstacles,
                "skeleton": [{"name": n, "points": lp.tolist()} for n, lp in self.world.skeleton],
            },
            "sim": asdict(self.sim),
            "rope": {"waypoints": self.rope_waypoints.tolist(), "n": self.rope_n, "attach": self.attach_loc},
            "grippers": [g.to_dict() for g in self.grippers],
            "task": task,
            "mppi": self.mppi.to_dict(),
            "weights": self.weights.to_dict(),
            "planner": planner,
            "ablation": self.ablation,
            "seeds": list(self.seeds),
            "variation": asdict(self.variation),
        })

    def __eq__(self, other):
        return isinstance(other, Scenario) and self.to_dict() == other.to_dict()

    def with_overrides(self, overrides: dict) -> "Scenario":
        """Apply dotted ``key=value`` overrides (values parsed as YAML) and revalidate."""
        d = self.to_dict()
        for key, value in overrides.items():
            node = d
            parts = key.split(".")
            for p in parts[:-1]:
                if not isinstance(node, dict) or p not in node:
                    raise ValidationError("no such setting", key)
                node = node[p]
            if not isinstance(node, dict) or parts[-1] not in node:
                raise ValidationError("no such setting", key)
            node[parts[-1]] = yaml.safe_load(value) if isinstance(value, str) else value
        return scenario_from_dict(d)

    # -- instantiation -------------------------------------------------------------
    def run_config(self) -> RunConfig:
        planner = PlannerConfig(self.planner.n_x, self.planner.mode, self.planner.penalty, self.ablation,
                                self.planner.h_extra)
        return RunConfig(self.world.skeleton, tuple(self.world.base), self.weights, self.mppi, planner, self.name)

    def simulator(self) -> Simulator:
        return Simulator(self.world, self.sim)

    def initial_state(self, seed: int) -> SimState:
        """Initial state for ``seed``: jittered rope and grippers, then a short settle."""
        rng = np.random.default_rng([int(seed), 7])
        v = self.variation
        wp = self.rope_waypoints.copy()
        if v.rope_jitter > 0:
            noise = rng.normal(0.0, v.rope_jitter, (len(wp), 3))
            noise[:, 2] = 0.0
            if self.attach_loc == 0.0:
                noise[0] = 0.0
            elif self.attach_loc == 1.0:
                noise[-1] = 0.0
            wp = wp + noise
        rope = RopeState.from_points(resample_polyline(wp, self.rope_n))
        attach = ()
        if self.attach_loc is not None:
            attach = (Attach(self.attach_loc, tuple(float(c) for c in p_of_l(rope, self.attach_loc))),)
        grippers = []
        for g in self.grippers:
            if g.grasp is not None:
                grippers.append(GripperState(p_of_l(rope, g.grasp), True, g.grasp, g.shoulder))
            else:
                pos = np.asarray(g.position, dtype=float)
                if v.gripper_jitter > 0:
                    pos = pos + rng.normal(0.0, v.gripper_jitter, 3)
                grippers.append(GripperState(pos, False, None, g.shoulder))
        state = SimState(rope, grippers, attach)
        return self.simulator().settle(state, v.settle_steps) if v.settle_steps else state

    def threading_plan(self) -> ThreadingPlan:
        return ThreadingPlan(list(self.subgoals), self.goal)

    def resolved_params(self) -> dict:
        d = self.to_dict()
        return {k: d[k] for k in ("sim", "mppi", "weights", "planner", "ablation")} | {"i_max": self.i_max}


def _world_from(d: dict) -> WorldConfig:
    d = d or {}
    extra = set(d) - {"base", "floor_z", "gravity", "obstacles", "skeleton"}
    if extra:
        raise ValidationError(f"unknown keys {sorted(extra)}", "world")
    obstacles = []
    for i, ob in enumerate(d.get("obstacles") or []):
        name = f"world.obstacles[{i}]"
        if not isinstance(ob, dict) or len(ob) != 1:
            raise ValidationError("expected a single 'box' or 'capsule' entry", name)
        kind, spec = next(iter(ob.items()))
        try:
            if kind == "box":
                obstacles.append(Box(_vec(spec["lo"], name + ".lo"), _vec(spec["hi"], name + ".hi")))
            elif kind == "capsule":
                r = float(spec["radius"])
                if r <= 0:
                    raise ValidationError("radius must be > 0", name + ".radius")
                obstacles.append(Capsule(_vec(spec["a"], name + ".a"), _vec(spec["b"], name + ".b"), r))
            else:
                raise ValidationError(f"unknown obstacle kind {kind!r}", name)
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"missing or malformed field {exc}", name) from None
        except ValueError as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(str(exc), name) from None
    names, loops = [], []
    for i, lp in enumerate(d.get("skeleton") or []):
        name = f"world.skeleton[{i}]"
        if not isinstance(lp, dict) or "name" not in lp or "points" not in lp:
            raise ValidationError("expected 'name' and 'points'", name)
        names.append(str(lp["name"]))
        loops.append(_points(lp["points"], name + ".points"))
    try:
        skel = Skeleton(names, loops)
    except TopologyError as exc:
        raise ValidationError(str(exc), "world.skeleton") from None
    floor = d.get("floor_z", 0.0)
    return WorldConfig(
        obstacles=obstacles,
        skeleton=skel,
        gravity=tuple(_vec(d.get("gravity", (0.0, 0.0, -9.81)), "world.gravity")),
        base=tuple(_vec(d.get("base", (0.0, 0.0, 0.0)), "world.base")),
        floor_z=None if floor is None else float(floor),
    )


def _goal_from(d, name) -> PointGoal:
    if not isinstance(d, dict) or "p" not in d or "d" not in d:
        raise ValidationError("goal needs 'p' and 'd'", name)
    try:
        return PointGoal(tuple(_vec(d["p"], name + ".p")), float(d["d"]), float(d.get("l_k", 1.0)))
    except ValueError as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(str(exc), name) from None


def scenario_from_dict(d: dict) -> Scenario:
    if not isinstance(d, dict):
        raise ValidationError("scenario must be a mapping")
    known = {"name", "units", "world", "sim", "rope", "grippers", "task", "mppi", "weights", "planner",
             "ablation", "seeds", "variation"}
    extra = set(d) - known
    if extra:
        raise ValidationError(f"unknown top-level keys {sorted(extra)}")
    for key in ("name", "rope", "grippers", "task"):
        if key not in d:
            raise ValidationError("missing required field", key)
    units = d.get("units") or UNITS
    if units != UNITS:
        raise ValidationError(f"only {UNITS} are supported", "units")

    world = _world_from(d.get("world"))
    sim = _dataclass_from(SimParams, d.get("sim"), "sim")

    rope = d["rope"]
    if not isinstance(rope, dict) or "waypoints" not in rope:
        raise ValidationError("rope needs 'waypoints'", "rope")
    wp = _points(rope["waypoints"], "rope.waypoints")
    n = int(rope.get("n", len(wp)))
    if n < 3:
        raise ValidationError("need at least 3 rope points", "rope.n")
    if "n" not in rope:
        # explicit point list: segment lengths must already be uniform
        seg = np.linalg.norm(np.diff(wp, axis=0), axis=1)
        if seg.max() - seg.min() > SEGMENT_TOL * seg.mean():
            raise ValidationError("rope segment lengths differ by more than 1%", "rope.waypoints")
    attach = rope.get("attach")
    if attach is not None and float(attach) not in (0.0, 1.0):
        raise ValidationError("attach must be a rope end (0 or 1) or null", "rope.attach")
    attach = None if attach is None else float(attach)
    if attach is not None:
        world.attach = Attach(attach, tuple(float(c) for c in (wp[0] if attach == 0.0 else wp[-1])))

    if not isinstance(d["grippers"], list) or not d["grippers"]:
        raise ValidationError("need at least one gripper", "grippers")
    grippers = []
    for i, g in enumerate(d["grippers"]):
        name = f"grippers[{i}]"
        if not isinstance(g, dict):
            raise ValidationError("expected a mapping", name)
        extra = set(g) - {"position", "shoulder", "grasp"}
        if extra:
            raise ValidationError(f"unknown keys {sorted(extra)}", name)
        grasp = g.get("grasp")
        if grasp is not None and not 0.0 <= float(grasp) <= 1.0:
            raise ValidationError("grasp location must lie in [0, 1]", name + ".grasp")
        if "position" not in g and grasp is None:
            raise ValidationError("a free gripper needs a position", name)
        pos = _vec(g["position"], name + ".position") if g.get("position") is not None else None
        sh = _vec(g["shoulder"], name + ".shoulder") if g.get("shoulder") is not None else None
        grippers.append(GripperSpec(pos, sh, None if grasp is None else float(grasp)))

    task = d["task"]
    if not isinstance(task, dict) or task.get("type") not in ("point_reaching", "threading"):
        raise ValidationError("task.type must be 'point_reaching' or 'threading'", "task.type")
    goal = _goal_from(task.get("goal"), "task.goal")
    subgoals = []
    if task["type"] == "threading":
        if attach is None:
            raise ValidationError("threading needs one rope end attached", "rope.attach")
        for i, sg in enumerate(task.get("subgoals") or []):
            name = f"task.subgoals[{i}]"
            try:
                sig = GLSignature.parse(str(sg["signature"]))
                through = None if sg.get("through") is None else tuple(_vec(sg["through"], name + ".through"))
                subgoals.append(Subgoal(str(sg["loop"]), int(sg["direction"]), sig, through))
            except (KeyError, TypeError) as exc:
                raise ValidationError(f"missing or malformed field {exc}", name) from None
            except ValueError as exc:
                if isinstance(exc, ValidationError):
                    raise
                raise ValidationError(str(exc), name) from None
        if not subgoals:
            raise ValidationError("threading needs at least one subgoal", "task.subgoals")
        try:
            ThreadingPlan(subgoals, goal).validate(world.skeleton)
        except ValueError as exc:
            raise ValidationError(str(exc), "task.subgoals") from None
    elif task.get("subgoals"):
        raise ValidationError("only threading tasks take subgoals", "task.subgoals")
    i_max = int(task.get("i_max", 500))
    if i_max < 0:
        raise ValidationError("must be >= 0", "task.i_max")

    mppi = _dataclass_from(MppiParams, d.get("mppi"), "mppi")
    weights = _dataclass_from(CostWeights, d.get("weights"), "weights")
    planner_d = dict(d.get("planner") or {})
    if "ablation" in planner_d:
        raise ValidationError("set the ablation at top level", "planner.ablation")
    planner = _dataclass_from(PlannerConfig, planner_d, "planner")
    ablation = d.get("ablation", "full")
    if ablation not in ABLATIONS:
        raise ValidationError(f"must be one of {ABLATIONS}", "ablation")
    seeds = d.get("seeds", [0])
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
        raise ValidationError("expected a non-empty list of integers", "seeds")
    variation = _dataclass_from(Variation, d.get("variation"), "variation")

    sc = Scenario(str(d["name"]), world, sim, wp, n, attach, grippers, task["type"], goal, subgoals, i_max,
                  mppi, weights, planner, ablation, list(seeds), variation)
    # fill in grasping gripper positions so the echoed record is complete
    rope0 = RopeState.from_points(resample_polyline(wp, n))
    for g in sc.grippers:
        if g.position is None:
            g.position = [float(c) for c in p_of_l(rope0, g.grasp)]
    return sc


def load_scenario(text: str) -> Scenario:
    """Parse and validate scenario text (YAML)."""
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ParseError(getattr(exc, "problem", None) or str(exc),
                         line=None if mark is None else mark.line + 1) from None
    return scenario_from_dict(data)


def load_scenario_file(path) -> Scenario:
    p = Path(path)
    if not p.exists() and (SCENARIO_DIR / f"{path}.yaml").exists():
        p = SCENARIO_DIR / f"{path}.yaml"
    return load_scenario(p.read_text())


def dump_scenario(sc: Scenario) -> str:
    header = "# units: metres and seconds\n"
    return header + yaml.safe_dump(sc.to_dict(), sort_keys=False, default_flow_style=None, width=120)


# -- trials --------------------------------------------------------------------------------------

def run_trial(sc: Scenario, seed: int) -> TrialResult:
    sim = sc.simulator()
    state = sc.initial_state(seed)
    cfg = sc.run_config()
    if sc.task == "threading":
        res = threading(sim, state, sc.threading_plan(), cfg, sc.i_max, seed)
    else:
        res = point_reaching(sim, state, sc.goal, cfg, sc.i_max, seed)
    res.params = sc.resolved_params()
    return res


# -- results -------------------------------------------------------------------------------------

def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, float) and not np.isfinite(x):
        return None
    return x


def result_record(result: TrialResult) -> dict:
    if not result.signature_history:
        raise ValueError("a completed trial must have a non-empty signature history")
    return _jsonable(result.to_record())


def write_result(result: TrialResult, sink) -> None:
    """Append one JSON line describing ``result`` to a path or open text stream."""
    line = json.dumps(result_record(result), sort_keys=True) + "\n"
    if isinstance(sink, (str, Path)):
        with open(sink, "a") as fh:
            fh.write(line)
    else:
        sink.write(line)


def read_results(source) -> list[dict]:
    if isinstance(source, (str, Path)):
        text = Path(source).read_text()
    elif isinstance(source, io.IOBase) or hasattr(source, "read"):
        text = source.read()
    else:
        raise TypeError("expected a path or a readable stream")
    return [json.loads(line) for line in text.splitlines() if line.strip()]
