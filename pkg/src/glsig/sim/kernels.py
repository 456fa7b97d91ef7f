"""Compiled inner loops of the rope simulator.

Everything here works on flat float arrays so that a single step and a
batch of MPPI rollouts share one code path.  Scalars travel in ``prm``
(see the ``P_*`` indices); obstacles travel as ``boxes`` rows
``[lo(3), hi(3)]`` and ``caps`` rows ``[a(3), b(3), radius]``.
"""

import numpy as np
from numba import njit

P_DT = 0
P_DAMPING = 1
P_ITERS = 2
P_REST = 3
P_ROPE_R = 4
P_GRIP_R = 5
P_ARM_R = 6
P_REACH = 7
P_FLOOR = 8
P_STRAIN = 9
P_TOL = 10
P_GX = 11
P_GY = 12
P_GZ = 13
N_PRM = 14


@njit(cache=True)
def _norm(v):
    return np.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])


@njit(cache=True)
def _closest_on_segment(p, a, b):
    e = b - a
    ee = e[0] * e[0] + e[1] * e[1] + e[2] * e[2]
    if ee <= 1e-18:
        return a.copy()
    t = ((p[0] - a[0]) * e[0] + (p[1] - a[1]) * e[1] + (p[2] - a[2]) * e[2]) / ee
    t = min(1.0, max(0.0, t))
    return a + t * e


@njit(cache=True)
def seg_seg_distance(p0, p1, q0, q1):
    d1 = p1 - p0
    d2 = q1 - q0
    r = p0 - q0
    a = np.dot(d1, d1)
    e = np.dot(d2, d2)
    f = np.dot(d2, r)
    if a <= 1e-18 and e <= 1e-18:
        return _norm(r)
    if a <= 1e-18:
        s = 0.0
        t = min(1.0, max(0.0, f / e))
    else:
        c = np.dot(d1, r)
        if e <= 1e-18:
            t = 0.0
            s = min(1.0, max(0.0, -c / a))
        else:
            b = np.dot(d1, d2)
            den = a * e - b * b
            s = 0.0
            if den > 1e-18:
                s = min(1.0, max(0.0, (b * f - c * e) / den))
            t = (b * s + f) / e
            if t < 0.0:
                t = 0.0
                s = min(1.0, max(0.0, -c / a))
            elif t > 1.0:
                t = 1.0
                s = min(1.0, max(0.0, (b - c) / a))
    return _norm(p0 + s * d1 - (q0 + t * d2))


@njit(cache=True)
def _box_gap(p, box, rad):
    """Signed gap between a sphere of radius ``rad`` and an axis-aligned box."""
    out = 0.0
    inside = 1e18
    for k in range(3):
        lo = box[k]
        hi = box[k + 3]
        if p[k] < lo:
            out += (lo - p[k]) ** 2
        elif p[k] > hi:
            out += (p[k] - hi) ** 2
        inside = min(inside, p[k] - lo, hi - p[k])
    if out > 0.0:
        return np.sqrt(out) - rad
    return -inside - rad


# vertices farther than this from every obstacle at the start of a step
# skip the per-iteration contact projection
NEAR_MARGIN = 0.05

# extra relaxation sweeps tried before a strained step is refused
RETRY_ITER_FACTOR = 4


@njit(cache=True)
def capsule_bounds(caps, rad):
    """Axis-aligned bounds of each capsule grown by ``rad`` (broad phase)."""
    bb = np.empty((caps.shape[0], 6))
    for ic in range(caps.shape[0]):
        big = caps[ic, 6] + rad
        for k in range(3):
            bb[ic, k] = min(caps[ic, k], caps[ic, k + 3]) - big
            bb[ic, k + 3] = max(caps[ic, k], caps[ic, k + 3]) + big
    return bb


@njit(cache=True, inline="always")
def push_out(xp, i, rad, boxes, caps, capbb):
    """Project the sphere centred at ``xp[i]`` out of every obstacle, in place.

    Written with scalar indexing only: taking array views in this inner
    loop costs more than the geometry itself.  ``capbb`` comes from
    :func:`capsule_bounds`.
    """
    for ib in range(boxes.shape[0]):
        inside = True
        best = 1e18
        axis = 0
        side = 0.0
        for k in range(3):
            lo = boxes[ib, k] - rad
            hi = boxes[ib, k + 3] + rad
            c = xp[i, k]
            if c <= lo or c >= hi:
                inside = False
                break
            if c - lo < best:
                best = c - lo
                axis = k
                side = lo
            if hi - c < best:
                best = hi - c
                axis = k
                side = hi
        if inside:
            xp[i, axis] = side
    for ic in range(caps.shape[0]):
        if (xp[i, 0] <= capbb[ic, 0] or xp[i, 0] >= capbb[ic, 3] or xp[i, 1] <= capbb[ic, 1]
                or xp[i, 1] >= capbb[ic, 4] or xp[i, 2] <= capbb[ic, 2] or xp[i, 2] >= capbb[ic, 5]):
            continue
        big = caps[ic, 6] + rad
        ex = caps[ic, 3] - caps[ic, 0]
        ey = caps[ic, 4] - caps[ic, 1]
        ez = caps[ic, 5] - caps[ic, 2]
        px = xp[i, 0] - caps[ic, 0]
        py = xp[i, 1] - caps[ic, 1]
        pz = xp[i, 2] - caps[ic, 2]
        ee = ex * ex + ey * ey + ez * ez
        t = 0.0
        if ee > 1e-18:
            t = min(1.0, max(0.0, (px * ex + py * ey + pz * ez) / ee))
        dx = px - t * ex
        dy = py - t * ey
        dz = pz - t * ez
        dn = np.sqrt(dx * dx + dy * dy + dz * dz)
        if dn < big:
            if dn < 1e-12:
                # any direction perpendicular to the capsule axis
                dx, dy, dz = -ey, ex, 0.0
                if dx * dx + dy * dy < 1e-24:
                    dx, dy, dz = 1.0, 0.0, 0.0
                dn = np.sqrt(dx * dx + dy * dy + dz * dz)
            f = big / dn
            xp[i, 0] = caps[ic, 0] + t * ex + dx * f
            xp[i, 1] = caps[ic, 1] + t * ey + dy * f
            xp[i, 2] = caps[ic, 2] + t * ez + dz * f


@njit(cache=True)
def _capsule_gap(p, cap, rad):
    ex = cap[3] - cap[0]
    ey = cap[4] - cap[1]
    ez = cap[5] - cap[2]
    px = p[0] - cap[0]
    py = p[1] - cap[1]
    pz = p[2] - cap[2]
    ee = ex * ex + ey * ey + ez * ez
    t = 0.0
    if ee > 1e-18:
        t = min(1.0, max(0.0, (px * ex + py * ey + pz * ez) / ee))
    dx = px - t * ex
    dy = py - t * ey
    dz = pz - t * ez
    return np.sqrt(dx * dx + dy * dy + dz * dz) - cap[6] - rad


@njit(cache=True)
def contact_count(p, rad, tol, boxes, caps):
    n = 0
    for ib in range(boxes.shape[0]):
        if _box_gap(p, boxes[ib], rad) < tol:
            n += 1
    for ic in range(caps.shape[0]):
        if _capsule_gap(p, caps[ic], rad) < tol:
            n += 1
    return n


@njit(cache=True)
def _segment_hits_box(a, b, box, rad):
    """Slab test of segment [a, b] against the box grown by ``rad``."""
    t0 = 0.0
    t1 = 1.0
    for k in range(3):
        lo = box[k] - rad
        hi = box[k + 3] + rad
        d = b[k] - a[k]
        if abs(d) < 1e-15:
            if a[k] < lo or a[k] > hi:
                return False
        else:
            ta = (lo - a[k]) / d
            tb = (hi - a[k]) / d
            if ta > tb:
                ta, tb = tb, ta
            t0 = max(t0, ta)
            t1 = min(t1, tb)
            if t0 > t1:
                return False
    return True


@njit(cache=True)
def pose_blocked(g, anchor, grip_r, arm_r, boxes, caps):
    """True when the gripper sphere or its arm segment hits an obstacle."""
    for ic in range(caps.shape[0]):
        if _capsule_gap(g, caps[ic], grip_r) < 0.0:
            return True
        if seg_seg_distance(anchor, g, caps[ic, 0:3], caps[ic, 3:6]) < caps[ic, 6] + arm_r:
            return True
    for ib in range(boxes.shape[0]):
        if _box_gap(g, boxes[ib], grip_r) < 0.0:
            return True
        if _segment_hits_box(anchor, g, boxes[ib], arm_r):
            return True
    return False


@njit(cache=True)
def pins(x, gpos, grasping, gidx, gw, att_idx, att_pos):
    """Pinned vertex indices and their target positions.

    A grasp inside a segment pins both of its vertices and translates the
    pair rigidly so the interpolated grasp point lands on the gripper.
    """
    cap = 2 * gpos.shape[0] + att_idx.shape[0]
    idx = np.empty(cap, dtype=np.int64)
    pos = np.empty((cap, 3))
    k = 0
    for a in range(att_idx.shape[0]):
        idx[k] = att_idx[a]
        pos[k] = att_pos[a]
        k += 1
    for g in range(gpos.shape[0]):
        if grasping[g] == 0:
            continue
        i = gidx[g]
        w = gw[g]
        if w < 1e-9:
            idx[k] = i
            pos[k] = gpos[g]
            k += 1
        elif w > 1.0 - 1e-9:
            idx[k] = i + 1
            pos[k] = gpos[g]
            k += 1
        else:
            shift = (1.0 - w) * x[i] + w * x[i + 1] - gpos[g]
            idx[k] = i
            pos[k] = x[i] - shift
            idx[k + 1] = i + 1
            pos[k + 1] = x[i + 1] - shift
            k += 2
    return idx[:k], pos[:k]


@njit(cache=True, inline="always")
def _follow(xp, i, j, rest, rad, floor, boxes, caps, capbb, has_obstacles):
    """Place vertex ``i`` at rest distance from its leader ``j``, then resolve contacts."""
    dx = xp[i, 0] - xp[j, 0]
    dy = xp[i, 1] - xp[j, 1]
    dz = xp[i, 2] - xp[j, 2]
    dl = np.sqrt(dx * dx + dy * dy + dz * dz)
    if dl > 1e-12:
        f = rest / dl
        xp[i, 0] = xp[j, 0] + dx * f
        xp[i, 1] = xp[j, 1] + dy * f
        xp[i, 2] = xp[j, 2] + dz * f
    if has_obstacles:
        push_out(xp, i, rad, boxes, caps, capbb)
    if xp[i, 2] < floor:
        xp[i, 2] = floor
        # slide along the floor so the segment keeps its rest length
        hz = floor - xp[j, 2]
        h2 = rest * rest - hz * hz
        hx = xp[i, 0] - xp[j, 0]
        hy = xp[i, 1] - xp[j, 1]
        hl = np.sqrt(hx * hx + hy * hy)
        if h2 > 0.0 and hl > 1e-12:
            f = np.sqrt(h2) / hl
            xp[i, 0] = xp[j, 0] + hx * f
            xp[i, 1] = xp[j, 1] + hy * f


@njit(cache=True)
def relax(x, v, pidx, ppos, prm, boxes, caps):
    """One position-based dynamics step of the rope with fixed pins."""
    n = x.shape[0]
    dt = prm[P_DT]
    damp = prm[P_DAMPING]
    rest = prm[P_REST]
    rad = prm[P_ROPE_R]
    floor = prm[P_FLOOR] + rad
    iters = int(prm[P_ITERS])
    has_obstacles = boxes.shape[0] + caps.shape[0] > 0
    capbb = capsule_bounds(caps, rad)

    pinned = np.zeros(n, dtype=np.bool_)
    for k in range(pidx.shape[0]):
        pinned[pidx[k]] = True

    xp = np.empty_like(x)
    for i in range(n):
        for c in range(3):
            xp[i, c] = x[i, c] + dt * (v[i, c] * (1.0 - damp) + prm[P_GX + c] * dt)
    for k in range(pidx.shape[0]):
        for c in range(3):
            xp[pidx[k], c] = ppos[k, c]

    # broad phase: only vertices starting near an obstacle are projected
    # inside the iterations; a full pass afterwards catches the rest
    near = np.zeros(n, dtype=np.bool_)
    if has_obstacles:
        m = NEAR_MARGIN + rad
        for i in range(n):
            for ib in range(boxes.shape[0]):
                if (boxes[ib, 0] - m < xp[i, 0] < boxes[ib, 3] + m and boxes[ib, 1] - m < xp[i, 1] < boxes[ib, 4] + m
                        and boxes[ib, 2] - m < xp[i, 2] < boxes[ib, 5] + m):
                    near[i] = True
            for ic in range(caps.shape[0]):
                if (capbb[ic, 0] - NEAR_MARGIN < xp[i, 0] < capbb[ic, 3] + NEAR_MARGIN
                        and capbb[ic, 1] - NEAR_MARGIN < xp[i, 1] < capbb[ic, 4] + NEAR_MARGIN
                        and capbb[ic, 2] - NEAR_MARGIN < xp[i, 2] < capbb[ic, 5] + NEAR_MARGIN):
                    near[i] = True

    for it in range(iters):
        for jj in range(n - 1):
            j = jj if it % 2 == 0 else n - 2 - jj
            w0 = 0.0 if pinned[j] else 1.0
            w1 = 0.0 if pinned[j + 1] else 1.0
            if w0 + w1 == 0.0:
                continue
            dx = xp[j + 1, 0] - xp[j, 0]
            dy = xp[j + 1, 1] - xp[j, 1]
            dz = xp[j + 1, 2] - xp[j, 2]
            dl = np.sqrt(dx * dx + dy * dy + dz * dz)
            if dl < 1e-12:
                continue
            corr = (dl - rest) / (dl * (w0 + w1))
            xp[j, 0] += w0 * corr * dx
            xp[j, 1] += w0 * corr * dy
            xp[j, 2] += w0 * corr * dz
            xp[j + 1, 0] -= w1 * corr * dx
            xp[j + 1, 1] -= w1 * corr * dy
            xp[j + 1, 2] -= w1 * corr * dz
        # long-range tethers to every pin keep the chain from stretching
        for k in range(pidx.shape[0]):
            pk = pidx[k]
            for i in range(n):
                if pinned[i]:
                    continue
                limit = rest * abs(i - pk)
                dx = xp[i, 0] - xp[pk, 0]
                dy = xp[i, 1] - xp[pk, 1]
                dz = xp[i, 2] - xp[pk, 2]
                dl = np.sqrt(dx * dx + dy * dy + dz * dz)
                if dl > limit:
                    f = limit / dl
                    xp[i, 0] = xp[pk, 0] + dx * f
                    xp[i, 1] = xp[pk, 1] + dy * f
                    xp[i, 2] = xp[pk, 2] + dz * f
        for i in range(n):
            if pinned[i]:
                continue
            if near[i]:
                push_out(xp, i, rad, boxes, caps, capbb)
            if xp[i, 2] < floor:
                xp[i, 2] = floor
    if has_obstacles:
        for i in range(n):
            if not pinned[i] and not near[i]:
                push_out(xp, i, rad, boxes, caps, capbb)

    # follow-the-leader pass on the free tails beyond the outermost pins:
    # exact inextensibility where Gauss-Seidel converges slowest
    if pidx.shape[0] > 0:
        lo = n
        hi = -1
        for k in range(pidx.shape[0]):
            lo = min(lo, pidx[k])
            hi = max(hi, pidx[k])
        for i in range(lo - 1, -1, -1):
            _follow(xp, i, i + 1, rest, rad, floor, boxes, caps, capbb, has_obstacles)
        for i in range(hi + 1, n):
            _follow(xp, i, i - 1, rest, rad, floor, boxes, caps, capbb, has_obstacles)

    vn = np.empty_like(x)
    for i in range(n):
        for c in range(3):
            vn[i, c] = (xp[i, c] - x[i, c]) / dt
    return xp, vn


@njit(cache=True)
def max_strain(x, rest):
    worst = 0.0
    for j in range(x.shape[0] - 1):
        dx = x[j + 1, 0] - x[j, 0]
        dy = x[j + 1, 1] - x[j, 1]
        dz = x[j + 1, 2] - x[j, 2]
        s = abs(np.sqrt(dx * dx + dy * dy + dz * dz) - rest) / rest
        if s > worst:
            worst = s
    return worst


@njit(cache=True)
def rope_contacts(x, pidx, prm, boxes, caps):
    n = 0
    if boxes.shape[0] + caps.shape[0] == 0:
        return 0
    for i in range(x.shape[0]):
        skip = False
        for k in range(pidx.shape[0]):
            if pidx[k] == i:
                skip = True
        if not skip:
            n += contact_count(x[i], prm[P_ROPE_R], prm[P_TOL], boxes, caps)
    return n


@njit(cache=True)
def step(x, v, gpos, act, grasping, gidx, gw, anchors, att_idx, att_pos, prm, boxes, caps):
    """Advance grippers by ``act * dt`` and relax the rope.

    Returns (points, velocities, gripper positions, contact count,
    gripper-blocked flags).
    """
    dt = prm[P_DT]
    reach = prm[P_REACH]
    zmin = prm[P_FLOOR] + prm[P_ROPE_R]
    ng = gpos.shape[0]
    gnew = gpos.copy()
    blocked = np.zeros(ng, dtype=np.bool_)
    hit = 0
    moved = False
    for g in range(ng):
        if act[g, 0] == 0.0 and act[g, 1] == 0.0 and act[g, 2] == 0.0:
            continue
        cand = gpos[g] + act[g] * dt
        d = cand - anchors[g]
        dn = _norm(d)
        if dn > reach:
            cand = anchors[g] + d * (reach / dn)
        if cand[2] < zmin:
            cand[2] = zmin
        if pose_blocked(cand, anchors[g], prm[P_GRIP_R], prm[P_ARM_R], boxes, caps):
            blocked[g] = True
            hit += 1
        else:
            gnew[g] = cand
            moved = True

    pidx, ppos = pins(x, gnew, grasping, gidx, gw, att_idx, att_pos)
    xn, vn = relax(x, v, pidx, ppos, prm, boxes, caps)
    if moved and max_strain(xn, prm[P_REST]) > prm[P_STRAIN]:
        # a long chain may just need more sweeps to follow the gripper
        deep = prm.copy()
        deep[P_ITERS] = prm[P_ITERS] * RETRY_ITER_FACTOR
        xn, vn = relax(x, v, pidx, ppos, deep, boxes, caps)
    if moved and max_strain(xn, prm[P_REST]) > prm[P_STRAIN]:
        # the rope is taut: the grippers cannot move this step
        for g in range(ng):
            if grasping[g] != 0 and (gnew[g, 0] != gpos[g, 0] or gnew[g, 1] != gpos[g, 1]
                                     or gnew[g, 2] != gpos[g, 2]):
                gnew[g] = gpos[g]
                blocked[g] = True
        pidx, ppos = pins(x, gnew, grasping, gidx, gw, att_idx, att_pos)
        xn, vn = relax(x, v, pidx, ppos, prm, boxes, caps)
    # a gripper stopped by an obstacle counts as one contact; one stopped
    # by a taut rope does not
    ncon = rope_contacts(xn, pidx, prm, boxes, caps) + hit
    return xn, vn, gnew, ncon, blocked


@njit(cache=True)
def rollout(x0, v0, g0, actions, grasping, gidx, gw, anchors, att_idx, att_pos, prm, boxes, caps,
            kidx, kw):
    """Roll ``actions`` (M, H, G, 3) forward; returns keypoint, gripper and contact traces."""
    m_count = actions.shape[0]
    horizon = actions.shape[1]
    ng = g0.shape[0]
    kp = np.empty((m_count, horizon, 3))
    gp = np.empty((m_count, horizon, ng, 3))
    nc = np.empty((m_count, horizon))
    for m in range(m_count):
        x = x0.copy()
        v = v0.copy()
        g = g0.copy()
        for h in range(horizon):
            x, v, g, n, _ = step(x, v, g, actions[m, h], grasping, gidx, gw, anchors, att_idx,
                                 att_pos, prm, boxes, caps)
            kp[m, h] = (1.0 - kw) * x[kidx] + kw * x[kidx + 1]
            gp[m, h] = g
            nc[m, h] = n
    return kp, gp, nc
