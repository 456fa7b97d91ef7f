import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glsig.topology import (
    DegenerateGeometry,
    NonIntegralSignature,
    Skeleton,
    TopologyError,
    as_loop,
    h_int,
    h_raw,
    h_vector,
    loop_field,
    min_distance,
    segment_distances,
    segment_field,
    signed_linking,
)
from oracles import (
    biot_savart,
    circle,
    crossing_linking_number,
    hopf_pair,
    random_loop_pair,
    random_rotation,
    separated_pair,
    torus_pair,
)

seeds = st.integers(0, 2**32 - 1)


# -- segment field ---------------------------------------------------------

def test_segment_field_matches_brute_force_biot_savart():
    f = segment_field((0, 0, 0), (1, 0, 0), (0.5, 1, 0))
    ref = biot_savart((0, 0, 0), (1, 0, 0), (0.5, 1, 0))
    np.testing.assert_allclose(f, ref, rtol=1e-6)
    # perpendicular to the plane holding the segment and the point
    assert abs(f[0]) < 1e-12 and abs(f[1]) < 1e-12


@settings(max_examples=60, deadline=None)
@given(seeds)
def test_segment_field_random_points_match_brute_force(seed):
    rng = np.random.default_rng(seed)
    s0, s1 = rng.normal(size=(2, 3))
    r = rng.normal(size=3) * 2
    if np.min(np.linalg.norm(r - (s0 + np.linspace(0, 1, 50)[:, None] * (s1 - s0)), axis=1)) < 0.2:
        r = r + 3.0
    np.testing.assert_allclose(segment_field(s0, s1, r), biot_savart(s0, s1, r), rtol=1e-5, atol=1e-9)


def test_segment_field_mirror_points_circulate_oppositely():
    up = segment_field((0, 0, 0), (1, 0, 0), (0.3, 0.7, 0))
    down = segment_field((0, 0, 0), (1, 0, 0), (0.3, -0.7, 0))
    np.testing.assert_allclose(up, -down, atol=1e-14)
    assert np.linalg.norm(up) > 0.1


def test_segment_field_decays_far_away():
    assert np.linalg.norm(segment_field((0, 0, 0), (1, 0, 0), (0.5, 1e6, 0))) < 1e-9


def test_segment_field_on_segment_line_is_degenerate():
    with pytest.raises(DegenerateGeometry):
        segment_field((0, 0, 0), (1, 0, 0), (2.0, 0, 0))
    with pytest.raises(DegenerateGeometry):
        segment_field((0, 0, 0), (0, 0, 0), (2.0, 1, 0))


def test_loop_field_batches_points():
    loop = circle((0, 0, 0), 1.0, (0, 0, 1), 32)
    pts = np.array([[0, 0, 0.0], [0, 0, 0.5], [0.2, 0.1, -0.3]])
    batch = loop_field(loop, pts)
    for p, f in zip(pts, batch):
        one = sum(segment_field(a, b, p) for a, b in zip(loop, np.roll(loop, -1, axis=0)))
        np.testing.assert_allclose(f, one, rtol=1e-12)
    # counter-clockwise loop seen from +z: field along +z at the centre
    assert batch[0, 2] > 0 and abs(batch[0, 0]) < 1e-12


# -- linking integral --------------------------------------------------------

def test_hopf_link_is_one():
    a, b = hopf_pair(64)
    assert 0.99 <= h_raw(a, b) <= 1.01
    assert h_int(a, b) == 1
    assert abs(crossing_linking_number(a, b)) == 1


def test_distant_coplanar_circles_unlinked():
    a = circle((0, 0, 0), 1.0, (0, 0, 1))
    b = circle((10, 0, 0), 1.0, (0, 0, 1))
    assert h_raw(a, b) < 0.01
    assert h_int(a, b) == 0


def test_double_winding_links_twice():
    a, b = torus_pair(np.random.default_rng(3), 2)
    assert 1.99 <= h_raw(a, b) <= 2.01
    assert abs(crossing_linking_number(a, b)) == 2
    assert h_int(b, a) == 2


def test_signed_linking_changes_sign_with_orientation():
    a, b = hopf_pair(64)
    assert signed_linking(a, b) == pytest.approx(-signed_linking(a[::-1], b), abs=1e-12)


def test_h_vector_per_skeleton_loop():
    a, b = hopf_pair(64)
    far = circle((20, 0, 0), 1.0, (0, 0, 1))
    skel = Skeleton(["near", "far"], [b, far])
    assert h_vector(a, skel) == (1, 0)
    assert h_vector(a, Skeleton()) == ()


def _grazing_pair(gap):
    a = circle((0, 0, 0), 1.0, (0, 0, 1), 16)
    b = circle((2.0 - gap, 0, 0), 1.0, (0, 1, 0), 16)
    return a, b


def test_h_vector_error_names_loop():
    a, b = _grazing_pair(1e-5)
    skel = Skeleton(["fine", "ring"], [circle((9, 0, 0), 1.0, (0, 0, 1)), b])
    with pytest.raises(NonIntegralSignature, match="ring"):
        h_vector(a, skel)


def test_grazing_loops_are_not_integral():
    a, b = _grazing_pair(1e-5)
    with pytest.raises(NonIntegralSignature):
        h_int(a, b)
    a, b = _grazing_pair(1e-3)
    assert h_int(a, b) == 1


def test_touching_loops_degenerate():
    a = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0.0]])
    b = np.array([[0.5, -1, 0], [0.5, 1, 0], [2, 2, 2.0]])
    # b's first segment passes through a's first segment
    with pytest.raises(TopologyError):
        h_int(b, a)


# -- validation ----------------------------------------------------------------

def test_loop_rejects_repeated_closing_vertex():
    with pytest.raises(TopologyError):
        as_loop([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 0]])
    with pytest.raises(TopologyError):
        as_loop([[0, 0, 0], [1, 0, 0]])
    with pytest.raises(TopologyError):
        as_loop([[0, 0, 0], [1, np.nan, 0], [0, 1, 0]])


def test_skeleton_names_unique_and_lookup():
    c = circle((0, 0, 0), 1.0, (0, 0, 1), 8)
    with pytest.raises(TopologyError):
        Skeleton(["a", "a"], [c, c])
    sk = Skeleton.from_dict({"x": c})
    assert len(sk) == 1 and sk.loop("x").shape == (8, 3)
    with pytest.raises(KeyError):
        sk.loop("y")


def test_segment_distances_against_dense_sampling():
    rng = np.random.default_rng(7)
    for _ in range(50):
        p0, p1, q0, q1 = rng.normal(size=(4, 3))
        t = np.linspace(0, 1, 801)
        a = p0 + t[:, None] * (p1 - p0)
        b = q0 + t[:, None] * (q1 - q0)
        dense = np.min(np.linalg.norm(a[:, None] - b[None], axis=-1))
        got = segment_distances(p0[None], p1[None], q0[None], q1[None])[0, 0]
        assert got <= dense + 1e-12
        assert got >= dense - 2e-3


# -- properties ------------------------------------------------------------------

def test_integrality_on_500_seeded_pairs():
    rng = np.random.default_rng(2024)
    for _ in range(500):
        a, b = torus_pair(rng, int(rng.integers(0, 4)))
        diameter = np.ptp(b, axis=0).max()
        assert min_distance(a, b) >= 0.05 * diameter
        assert len(a) >= 32 and len(b) >= 32
        h = h_raw(a, b)
        assert abs(h - round(h)) < 0.02


@settings(max_examples=40, deadline=None)
@given(seeds, st.integers(0, 3), st.integers(0, 95), st.booleans())
def test_subdivision_invariance(seed, windings, at, split_tau):
    a, b = torus_pair(np.random.default_rng(seed), windings)
    ref = h_raw(a, b)
    target = a if split_tau else b
    k = at % len(target)
    mid = 0.5 * (target[k] + target[(k + 1) % len(target)])
    split = np.insert(target, k + 1, mid, axis=0)
    new = h_raw(split, b) if split_tau else h_raw(a, split)
    assert abs(new - ref) < 1e-6


@settings(max_examples=40, deadline=None)
@given(seeds, st.integers(0, 3))
def test_rigid_motion_invariance(seed, windings):
    rng = np.random.default_rng(seed)
    a, b = torus_pair(rng, windings)
    rot = random_rotation(rng)
    shift = rng.uniform(-5, 5, size=3)
    moved = h_raw(a @ rot.T + shift, b @ rot.T + shift)
    assert abs(moved - h_raw(a, b)) < 1e-9


@settings(max_examples=40, deadline=None)
@given(seeds, st.integers(0, 3))
def test_orientation_invariance(seed, windings):
    a, b = torus_pair(np.random.default_rng(seed), windings)
    ref = h_raw(a, b)
    assert h_raw(a[::-1], b) == pytest.approx(ref, abs=1e-12)
    assert h_raw(a, b[::-1]) == pytest.approx(ref, abs=1e-12)
    assert h_raw(b, a) == pytest.approx(ref, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_separated_loops_have_zero_signature(seed):
    a, b = separated_pair(np.random.default_rng(seed))
    assert a[:, 0].max() < 0 < b[:, 0].min()
    assert h_int(a, b) == 0


def test_agrees_with_crossing_oracle_on_200_pairs():
    rng = np.random.default_rng(99)
    for _ in range(200):
        a, b, lk = random_loop_pair(rng)
        assert h_int(a, b) == lk
