import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glsig.grasp_graph import GLSignature, compute_signature
from glsig.mppi import CostWeights
from glsig.planner import (
    PENALTY,
    Blocklist,
    GraspCandidate,
    PlannerConfig,
    Strategy,
    blocklist_decision,
    check_strategies,
    grasp_cost,
    plan_grasp,
    sample_candidates,
    simulate_candidate,
    state_change,
    valid_strategies,
)
from glsig.sim import Box, PathBlocked, SimError, Simulator, WorldConfig, p_of_l
from glsig.topology import Skeleton
from scenes import gate_scene, straight_state

W = CostWeights()
S, G, M, R = Strategy.STAY, Strategy.GRASP, Strategy.MOVE, Strategy.RELEASE
BASE = (0.0, 0.0, 0.0)


def sim_for(state, obstacles=()):
    return Simulator(WorldConfig(obstacles=list(obstacles), attach=state.attach[0] if state.attach else None,
                                 floor_z=None, gravity=(0.0, 0.0, 0.0), base=(0.0, 0.2, 0.3)))


def cand(strats, locs, **kw):
    return GraspCandidate(tuple(strats), tuple(locs), **kw)


# -- sampling ----------------------------------------------------------------------------

def test_sampling_respects_strategy_validity():
    s = straight_state([0.5, None])
    for c in sample_candidates(s, 200, 0, "full"):
        check_strategies(s, c.strategies)
        assert c.strategies[0] in valid_strategies(True)
        assert c.strategies[1] in valid_strategies(False)
        assert c.final_locations(s), "at least one gripper must end up grasping"
        assert any(x is not S for x in c.strategies)
        for x, l in zip(c.strategies, c.locations):
            assert (l is not None) == (x in (G, M))
            if l is not None:
                assert 0.0 <= l <= 1.0


def test_alternating_mode_pairs_release_or_stay_with_grasp():
    s = straight_state([0.5, None])
    for c in sample_candidates(s, 100, 1, "alternating"):
        assert c.strategies[0] in (R, S)
        assert c.strategies[1] is G


def test_single_candidate_and_determinism():
    s = straight_state([0.5, None])
    assert len(sample_candidates(s, 1, 0)) == 1
    a = sample_candidates(s, 30, 42)
    b = sample_candidates(s, 30, 42)
    assert [(c.strategies, c.locations) for c in a] == [(c.strategies, c.locations) for c in b]
    with pytest.raises(ValueError):
        sample_candidates(s, 0, 0)
    with pytest.raises(ValueError):
        sample_candidates(s, 3, 0, "sideways")


def test_check_strategies_rejects_invalid():
    s = straight_state([0.5, None])
    with pytest.raises(ValueError):
        check_strategies(s, (G, G))
    with pytest.raises(ValueError):
        check_strategies(s, (S, R))
    with pytest.raises(ValueError):
        check_strategies(s, (S,))


# -- simulation of candidates ---------------------------------------------------------------

def test_stay_candidate_keeps_state():
    s = straight_state([0.5, None])
    c = simulate_candidate(sim_for(s), s, cand((S, S), (None, None)))
    assert c.feasible and c.result_state is s


def test_grasp_tip_in_free_space():
    s = straight_state([0.5, None], attach=0.0)
    c = simulate_candidate(sim_for(s), s, cand((S, G), (None, 1.0)))
    assert c.feasible
    r = c.result_state
    assert r.grippers[1].grasp_loc == 1.0
    np.testing.assert_allclose(r.grippers[1].position, p_of_l(r.rope, 1.0), atol=1e-9)


def test_target_behind_wall_is_infeasible():
    s = straight_state([0.2, None], attach=None)
    box = Box([0.1, 0.35, -1.0], [1.0, 0.5, 2.0])  # between the base and the rope's far half
    c = simulate_candidate(sim_for(s, [box]), s, cand((S, G), (None, 0.95)))
    assert c.feasible is False
    assert c.result_state is None


def test_overlapping_grasp_is_infeasible():
    s = straight_state([0.5, None])
    c = simulate_candidate(sim_for(s), s, cand((S, G), (None, 0.51)))
    assert c.feasible is False


def test_release_only_is_infeasible_without_attach():
    s = straight_state([0.5, None], attach=None)
    assert not sample_candidates(s, 1, 0)[0].strategies == (R, S)
    c = simulate_candidate(sim_for(s), s, cand((R, S), (None, None)))
    assert c.feasible is False


# -- cost -------------------------------------------------------------------------------------

def test_infeasible_cost_at_least_penalty():
    s = straight_state([0.5, None])
    c = cand((S, G), (None, 1.0), feasible=False)
    assert grasp_cost(c, s, 1.0, None, None, Skeleton(), BASE, W) >= PENALTY


def test_zero_cost_for_grasp_at_keypoint_without_change():
    s = straight_state([1.0, None])
    c = cand((S, S), (None, None), feasible=True, result_state=s)
    assert grasp_cost(c, s, 1.0, Blocklist(), None, Skeleton(), BASE, W) == 0.0


def test_geodesic_term_is_linear():
    s = straight_state([0.7, None])
    a = cand((S, S), (None, None), feasible=True, result_state=s)
    s2 = straight_state([0.9, None])
    b = cand((S, S), (None, None), feasible=True, result_state=s2)
    # identical rope and gripper placement differ only by the grasp label
    s2.grippers[0].position = s.grippers[0].position.copy()
    ca = grasp_cost(a, s, 1.0, None, None, Skeleton(), BASE, W)
    cb = grasp_cost(b, s, 1.0, None, None, Skeleton(), BASE, W)
    assert ca - cb == pytest.approx(0.2)


def test_signature_terms_and_no_signature_switch():
    state, skel = gate_scene()
    sig = compute_signature(state, skel, BASE)
    c = cand((S, S), (None, None), feasible=True, result_state=state)
    bl = Blocklist([sig])
    assert grasp_cost(c, state, 1.0, bl, None, skel, BASE, W) == pytest.approx(PENALTY)
    assert c.cost_terms["blocklist"] == PENALTY
    other = GLSignature(((0,),), 1)
    assert grasp_cost(c, state, 1.0, None, other, skel, BASE, W) == pytest.approx(PENALTY)
    assert grasp_cost(c, state, 1.0, bl, other, skel, BASE, W, use_signature=False) == 0.0


def test_delta_s_is_clamped():
    s = straight_state([1.0, None])
    far = s.copy()
    far.rope.points = far.rope.points + 100.0
    c = cand((S, S), (None, None), feasible=True, result_state=far)
    grasp_cost(c, s, 1.0, None, None, Skeleton(), BASE, W)
    assert c.cost_terms["delta_s"] == 50.0 * W.beta1
    assert state_change(s, s) == 0.0


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 50), st.floats(0, 50))
def test_penalty_dominates(l_a, l_b, ds_a, ds_b):
    """A flagged candidate never beats a clean feasible one: max clean cost is 2 + 50 < 100."""
    clean = 2 * abs(l_a - 1.0) + W.beta1 * min(ds_a, 50.0)
    flagged = PENALTY + abs(l_b - 1.0) + W.beta1 * min(ds_b, 50.0)
    assert clean < flagged


# -- planning -------------------------------------------------------------------------------------

def test_plan_prefers_grasp_closer_to_keypoint():
    s = straight_state([0.3, None])
    sim = sim_for(s)
    best, cands = plan_grasp(sim, s, 1.0, None, None, Skeleton(), BASE, W, PlannerConfig(n_x=20), 3)
    assert best.feasible
    assert min(abs(l - 1.0) for l in best.final_locations(s)) < 0.7
    assert best.cost == min(c.cost for c in cands)
    for c in cands:
        check_strategies(s, c.strategies)


def test_plan_is_deterministic():
    s = straight_state([0.3, None])
    sim = sim_for(s)
    a, ca = plan_grasp(sim, s, 1.0, None, None, Skeleton(), BASE, W, PlannerConfig(n_x=10), 9)
    b, cb = plan_grasp(sim, s, 1.0, None, None, Skeleton(), BASE, W, PlannerConfig(n_x=10), 9)
    assert a.describe() == b.describe()
    assert [c.cost for c in ca] == [c.cost for c in cb]


def test_only_feasible_candidate_wins():
    """Everything near the keypoint is boxed in, so the one reachable grasp wins despite its geodesic."""
    s = straight_state([None, None], attach=0.0)
    box = Box([-0.1, 0.35, -1.0], [1.0, 0.5, 2.0])
    sim = sim_for(s, [box])
    best, cands = plan_grasp(sim, s, 1.0, None, None, Skeleton(), BASE, W, PlannerConfig(n_x=30), 5)
    feasible = [c for c in cands if c.feasible]
    assert feasible, "scene should leave some grasps reachable"
    assert best.feasible
    assert all(l <= 0.35 for l in best.final_locations(s))


def test_blocklist_excludes_signature_when_alternative_exists():
    state, skel = gate_scene()
    sim = sim_for(state)
    cfg = PlannerConfig(n_x=40)
    sig = compute_signature(state, skel, BASE)
    bl = Blocklist([sig])
    best, cands = plan_grasp(sim, state, 1.0, bl, None, skel, BASE, W, cfg, 2)
    alternatives = [c for c in cands if c.feasible and c.signature is not None and c.signature != sig]
    assert alternatives
    assert best.signature != sig
    assert best.cost_terms["blocklist"] == 0.0


def test_rollout_scored_ablation_adds_rollout_term():
    s = straight_state([0.3, None])
    sim = sim_for(s)
    cfg = PlannerConfig(n_x=3, ablation="rollout_scored", h_extra=2)
    best, cands = plan_grasp(sim, s, 1.0, None, None, Skeleton(), BASE, W, cfg, 1, goal_p=(1.0, 0.6, 0.3))
    assert all("rollout" in c.cost_terms for c in cands if c.feasible)


def test_planner_config_validation():
    with pytest.raises(ValueError):
        PlannerConfig(n_x=0)
    with pytest.raises(ValueError):
        PlannerConfig(ablation="magic")


# -- blocklist decision -------------------------------------------------------------------------------

def test_blocklist_decision_examples():
    s = straight_state([0.5, None])
    closer = cand((M, S), (0.8, None))
    assert blocklist_decision(s, closer, [0.5], 1.0) is False
    same = cand((M, S), (0.5, None))
    assert blocklist_decision(s, same, [0.5], 1.0) is True
    s2 = straight_state([0.5, 0.2])
    # min over current grasps is 0.5; best keeps 0.2 and moves the other to 0.6: d* = 0.4 < 0.5
    multi = cand((M, S), (0.6, None))
    assert blocklist_decision(s2, multi, [0.5, 0.2], 1.0) is False
    worse = cand((M, S), (0.3, None))
    assert blocklist_decision(s2, worse, [0.5, 0.2], 1.0) is True


def test_blocklist_stores_canonical_text():
    bl = Blocklist()
    assert bl.add("{[1,0],[0,1]}")
    assert not bl.add(GLSignature(((0, 1), (1, 0))))
    assert GLSignature(((1, 0), (0, 1))) in bl
    assert bl.texts() == ["{[0,1],[1,0]}"]


# -- execution -------------------------------------------------------------------------------------------

def test_execute_all_stay_is_noop():
    s = straight_state([0.5, None])
    sim = sim_for(s)
    c = simulate_candidate(sim, s, cand((S, S), (None, None)))
    assert sim.execute_grasp_change(s, c) is s


def test_execute_move_along_rope():
    s = straight_state([0.5, None])
    sim = sim_for(s)
    c = simulate_candidate(sim, s, cand((M, S), (0.9, None)))
    assert c.feasible
    out = sim.execute_grasp_change(s, c)
    assert out.grippers[0].grasp_loc == 0.9
    assert np.linalg.norm(out.grippers[0].position - p_of_l(out.rope, 0.9)) < 1e-3


def test_execute_infeasible_raises_and_blocked_path_reports_state():
    s = straight_state([0.5, None])
    sim = sim_for(s)
    with pytest.raises(SimError):
        sim.execute_grasp_change(s, cand((M, S), (0.9, None), feasible=False))
    c = simulate_candidate(sim, s, cand((S, G), (None, 0.9)))
    # a wall appears between planning and execution
    blocked = Simulator(WorldConfig(obstacles=[Box([0.2, 0.35, -1], [1, 0.45, 2])], attach=s.attach[0],
                                    floor_z=None, gravity=(0, 0, 0), base=(0.0, 0.2, 0.3)))
    with pytest.raises(PathBlocked) as info:
        blocked.execute_grasp_change(s, c)
    assert info.value.state is not None
