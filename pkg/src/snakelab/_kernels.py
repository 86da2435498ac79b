"""Compiled inner loops.

Everything here is deterministic given the 64-bit keys passed in.  Randomness
comes from a counter-based generator (additive orbit through a 64-bit mixing
permutation), so a kernel's draw sequence depends only on (key, draw index)
and never on global state.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

__all__ = [
    "sample_excursion_heights",
    "fill_tips",
    "level_pass",
    "refined_extrema",
    "gaussian_block",
    "energy_permutation",
]

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_INV53 = 2.0 ** -53
_TWOPI = 2.0 * math.pi


@njit(cache=True, inline="always")
def _mix(z):
    z = (z ^ (z >> _S30)) * _MIX1
    z = (z ^ (z >> _S27)) * _MIX2
    return z ^ (z >> _S31)


@njit(cache=True, inline="always")
def _u01(key, ctr):
    # strictly inside (0, 1) so log() below is always finite
    x = _mix(key + (ctr + _ONE) * _GOLDEN)
    return (np.float64(x >> _S11) + 0.5) * _INV53


@njit(cache=True, inline="always")
def _norm(key, ctr):
    u1 = _u01(key, ctr)
    u2 = _u01(key, ctr + _ONE)
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(_TWOPI * u2)


@njit(cache=True)
def gaussian_block(key, start, count):
    """``count`` standard normals at draw indices start, start+2, ..."""
    out = np.empty(count, np.float64)
    ctr = np.uint64(start)
    two = np.uint64(2)
    for i in range(count):
        out[i] = _norm(key, ctr)
        ctr += two
    return out


_EXP_BIAS = np.uint64(4096)
_P53 = 9007199254740992.0  # 2 ** 53


@njit(cache=True, inline="always")
def _fbits(x):
    # exact, portable float64 fingerprint via frexp (mantissa * 2**53 is an
    # integer, so no rounding happens on the way back)
    m, e = math.frexp(x)
    u = np.uint64(np.int64(m * _P53))
    return u + (np.uint64(np.int64(e)) + _EXP_BIAS) * _GOLDEN


@njit(cache=True, inline="always")
def _edge_u(a, b, y, salt):
    """Uniform in (0,1) tied to an edge's endpoint labels and a level.

    Deterministic in its arguments, so repeated sweeps over the same
    trajectory reproduce identical within-edge refinements.
    """
    z = _fbits(a) * _MIX1 ^ _fbits(b) * _MIX2 ^ _fbits(y) * _GOLDEN ^ salt
    x = _mix(z)
    return (np.float64(x >> _S11) + 0.5) * _INV53


@njit(cache=True, inline="always")
def _edge_max(a, b, var_edge, u):
    # inverse-transform draw of the running maximum of a Brownian bridge
    # from a to b with variance budget var_edge:
    # P(max > m) = exp(-2 (m-a)(m-b) / var_edge) for m >= max(a, b)
    d = a - b
    return 0.5 * ((a + b) + math.sqrt(d * d - 2.0 * var_edge * math.log(u)))


@njit(cache=True, inline="always")
def _edge_min(a, b, var_edge, u):
    d = a - b
    return 0.5 * ((a + b) - math.sqrt(d * d - 2.0 * var_edge * math.log(u)))


_SALT_MAX = np.uint64(0x8D9F37B1E6A2443D)
_SALT_MIN = np.uint64(0x51C64B2A9E80F76B)


@njit(cache=True)
def refined_extrema(heights, tips, x0, var_edge, max_h):
    """Global label extremes with within-edge bridge refinement.

    The raw extremes over lattice vertices understate the path extremes by
    the fluctuation of each segment between its endpoints.  Each tree edge
    (one per up-step) gets an inverse-transform draw of its bridge maximum
    and minimum, keyed off the endpoint labels, and the sweep returns the
    refined (max, min) over the whole trajectory.
    """
    n = heights.shape[0]
    lab = np.empty(max_h + 1, np.float64)
    lab[0] = x0
    mx = x0
    mn = x0
    for i in range(1, n):
        hi = heights[i]
        if hi > heights[i - 1]:
            a = lab[hi - 1]
            b = tips[i]
            lab[hi] = b
            m = _edge_max(a, b, var_edge, _edge_u(a, b, 0.0, _SALT_MAX))
            if m > mx:
                mx = m
            w = _edge_min(a, b, var_edge, _edge_u(a, b, 0.0, _SALT_MIN))
            if w < mn:
                mn = w
    return mx, mn


@njit(cache=True)
def sample_excursion_heights(key, m, step_cap):
    """Lattice excursion conditioned to reach height ``m`` before returning.

    The walk starts with a forced up-step; while below ``m`` it moves with the
    hitting-probability tilt p(k -> k+1) = (k+1)/(2k), which is exactly the
    walk conditioned to hit ``m`` before 0.  At and beyond ``m`` it is the
    plain symmetric walk, absorbed at 0.

    Returns (heights, complete).  ``complete`` is False when step_cap was hit
    first; the array then ends wherever the walk stood.
    """
    alloc = 4096
    h = np.empty(alloc, np.int32)
    h[0] = 0
    h[1] = 1
    n = 1
    k = 1
    ctr = np.uint64(0)
    while k < m:
        u = _u01(key, ctr)
        ctr += _ONE
        if u * (2.0 * k) < k + 1.0:
            k += 1
        else:
            k -= 1
        n += 1
        if n >= alloc:
            alloc *= 2
            h2 = np.empty(alloc, np.int32)
            h2[:n] = h[:n]
            h = h2
        h[n] = k
        if n >= step_cap:
            return h[: n + 1].copy(), False
    while k > 0:
        u = _u01(key, ctr)
        ctr += _ONE
        if u < 0.5:
            k += 1
        else:
            k -= 1
        n += 1
        if n >= alloc:
            alloc *= 2
            h2 = np.empty(alloc, np.int32)
            h2[:n] = h[:n]
            h = h2
        h[n] = k
        if n >= step_cap and k > 0:
            return h[: n + 1].copy(), False
    return h[: n + 1].copy(), True


@njit(cache=True)
def fill_tips(heights, key, x0, sig, max_h):
    """Tip labels along a lattice lifetime walk.

    Each up-step stacks a fresh N(0, sig^2) increment; down-steps pop.  The
    tip at a step is the running sum of the stacked increments, which gives
    tip covariance sig^2 * (shared stack depth) exactly.
    """
    n = heights.shape[0]
    tips = np.empty(n, np.float64)
    stack = np.empty(max_h + 1, np.float64)
    stack[0] = x0
    tips[0] = x0
    ctr = np.uint64(0)
    two = np.uint64(2)
    for i in range(1, n):
        hi = heights[i]
        if hi > heights[i - 1]:
            g = sig * _norm(key, ctr)
            ctr += two
            stack[hi] = stack[hi - 1] + g
        tips[i] = stack[hi]
    return tips


@njit(cache=True)
def level_pass(heights, tips, x0, y, collar, var_edge, max_h):
    """One sweep of crossing bookkeeping at label level ``y``.

    Reconstructs the stacked partial labels and tracks, per stack entry,
    whether its segment reaches ``y``.  A segment counts as a hit when its
    endpoints straddle the level, and otherwise with the Brownian bridge
    touch probability exp(-2 (a-y)(b-y) / var_edge), decided by a uniform
    keyed off the endpoint labels so repeated sweeps agree.  From the stack
    of live hits:

    - a step is "kept" when no hit is live (its path has not reached y);
    - the step's component is the live hit pushed last (the nearest level
      hit on its ancestor path), component 0 being the root's side;
    - maximal runs of non-kept steps grouped by the *first* live hit are
      the subtrees hanging off the level, one run per hit.

    Counting conventions: all per-step masks cover every step; occupation
    style counters cover steps 0..n-2 so each counted step carries one time
    quantum.  Component and run extremes include within-edge bridge
    refinements for the edges attributed to them.

    Returns a tuple:
      kept        uint8[n]
      comp_of     int32[n]   (0 = root component)
      run_of      int32[n]   (-1 where kept)
      root_steps, root_collar  int64 (collar = two-sided |tip-y| < collar)
      comp_side   int8[K+1], comp_steps int64[K+1], comp_collar int64[K+1],
      comp_max    f64[K+1],  comp_min f64[K+1], comp_debut int64[K+1]
                  (index 0 describes the root component; comp_collar is
                  one-sided on the component's side for k >= 1)
      run_steps   int64[R], run_max f64[R], run_min f64[R], run_side int8[R]
    """
    n = heights.shape[0]
    kept = np.empty(n, np.uint8)
    comp_of = np.empty(n, np.int32)
    run_of = np.empty(n, np.int32)

    lab = np.empty(max_h + 1, np.float64)
    lab[0] = x0
    cs_id = np.empty(max_h + 1, np.int32)
    cs_side = np.empty(max_h + 1, np.int8)
    cs_depth = np.empty(max_h + 1, np.int32)
    sp = 0

    calloc = 256
    comp_side = np.zeros(calloc, np.int8)
    comp_steps = np.zeros(calloc, np.int64)
    comp_collar = np.zeros(calloc, np.int64)
    comp_max = np.full(calloc, -np.inf)
    comp_min = np.full(calloc, np.inf)
    comp_debut = np.full(calloc, -1, np.int64)
    n_comp = 0

    ralloc = 256
    run_steps = np.zeros(ralloc, np.int64)
    run_max = np.full(ralloc, -np.inf)
    run_min = np.full(ralloc, np.inf)
    run_side = np.zeros(ralloc, np.int8)
    n_run = 0

    root_steps = 0
    root_collar = 0
    comp_side[0] = 1 if x0 > y else -1
    comp_debut[0] = 0
    comp_max[0] = x0
    comp_min[0] = x0

    for i in range(n):
        if i > 0:
            hi = heights[i]
            if hi > heights[i - 1]:
                v_lo = lab[hi - 1]
                v_hi = tips[i]
                lab[hi] = v_hi
                em = _edge_max(v_lo, v_hi, var_edge,
                               _edge_u(v_lo, v_hi, 0.0, _SALT_MAX))
                en = _edge_min(v_lo, v_hi, var_edge,
                               _edge_u(v_lo, v_hi, 0.0, _SALT_MIN))
                # a segment reaches the level when its endpoints straddle it
                # or its refined bridge extreme passes it; tying the test to
                # the same permanent per-edge draws keeps every sweep and
                # every level mutually consistent
                crossed = en <= y if v_lo > y else em >= y
                if crossed:
                    if sp == 0:
                        # new subtree off the level: open a run
                        if n_run >= ralloc:
                            ralloc *= 2
                            t1 = np.zeros(ralloc, np.int64)
                            t1[:n_run] = run_steps[:n_run]
                            run_steps = t1
                            t2 = np.full(ralloc, -np.inf)
                            t2[:n_run] = run_max[:n_run]
                            run_max = t2
                            t3 = np.full(ralloc, np.inf)
                            t3[:n_run] = run_min[:n_run]
                            run_min = t3
                            t4 = np.zeros(ralloc, np.int8)
                            t4[:n_run] = run_side[:n_run]
                            run_side = t4
                        run_side[n_run] = 1 if v_hi > y else -1
                        n_run += 1
                    n_comp += 1
                    if n_comp + 1 >= calloc:
                        calloc *= 2
                        u1 = np.zeros(calloc, np.int8)
                        u1[: n_comp] = comp_side[: n_comp]
                        comp_side = u1
                        u2 = np.zeros(calloc, np.int64)
                        u2[: n_comp] = comp_steps[: n_comp]
                        comp_steps = u2
                        u3 = np.zeros(calloc, np.int64)
                        u3[: n_comp] = comp_collar[: n_comp]
                        comp_collar = u3
                        u4 = np.full(calloc, -np.inf)
                        u4[: n_comp] = comp_max[: n_comp]
                        comp_max = u4
                        u5 = np.full(calloc, np.inf)
                        u5[: n_comp] = comp_min[: n_comp]
                        comp_min = u5
                        u6 = np.full(calloc, -1, np.int64)
                        u6[: n_comp] = comp_debut[: n_comp]
                        comp_debut = u6
                    comp_side[n_comp] = 1 if v_hi > y else -1
                    comp_debut[n_comp] = i
                    cs_id[sp] = n_comp
                    cs_side[sp] = comp_side[n_comp]
                    cs_depth[sp] = hi
                    sp += 1
                # attribute this edge's bridge extremes to the component
                # live after the push (boundary slivers of crossing edges
                # go to the child, an O(sqrt(var_edge)) convention)
                cid_e = cs_id[sp - 1] if sp > 0 else 0
                if em > comp_max[cid_e]:
                    comp_max[cid_e] = em
                if en < comp_min[cid_e]:
                    comp_min[cid_e] = en
                if sp > 0:
                    rid_e = n_run - 1
                    if em > run_max[rid_e]:
                        run_max[rid_e] = em
                    if en < run_min[rid_e]:
                        run_min[rid_e] = en
            else:
                if sp > 0 and cs_depth[sp - 1] == heights[i - 1]:
                    sp -= 1

        tip = tips[i]
        if sp == 0:
            kept[i] = 1
            comp_of[i] = 0
            run_of[i] = -1
            if i < n - 1:
                root_steps += 1
                if abs(tip - y) < collar:
                    root_collar += 1
        else:
            kept[i] = 0
            cid = cs_id[sp - 1]
            comp_of[i] = cid
            rid = n_run - 1
            run_of[i] = rid
            if i < n - 1:
                comp_steps[cid] += 1
                side = cs_side[sp - 1]
                if side > 0:
                    if y < tip < y + collar:
                        comp_collar[cid] += 1
                else:
                    if y - collar < tip < y:
                        comp_collar[cid] += 1
                if tip > comp_max[cid]:
                    comp_max[cid] = tip
                if tip < comp_min[cid]:
                    comp_min[cid] = tip
                run_steps[rid] += 1
                if tip > run_max[rid]:
                    run_max[rid] = tip
                if tip < run_min[rid]:
                    run_min[rid] = tip

    comp_steps[0] = root_steps
    comp_collar[0] = root_collar
    return (
        kept,
        comp_of,
        run_of,
        root_steps,
        root_collar,
        comp_side[: n_comp + 1].copy(),
        comp_steps[: n_comp + 1].copy(),
        comp_collar[: n_comp + 1].copy(),
        comp_max[: n_comp + 1].copy(),
        comp_min[: n_comp + 1].copy(),
        comp_debut[: n_comp + 1].copy(),
        run_steps[:n_run].copy(),
        run_max[:n_run].copy(),
        run_min[:n_run].copy(),
        run_side[:n_run].copy(),
    )


@njit(cache=True)
def energy_permutation(dist, n_first, perms):
    """Energy statistics of a pooled distance matrix under index shuffles.

    ``dist`` is the symmetric pooled distance matrix, rows 0..n_first-1 being
    the first sample in the observed split.  Row p of ``perms`` relabels the
    pool; the statistic of the observed split is recovered by passing the
    identity as a row.  Returns one energy statistic per row.
    """
    k = dist.shape[0]
    n_perm = perms.shape[0]
    out = np.empty(n_perm)
    in_first = np.zeros(k, dtype=np.uint8)
    for p in range(n_perm):
        for i in range(k):
            in_first[i] = 0
        for i in range(n_first):
            in_first[perms[p, i]] = 1
        s_aa = 0.0
        s_bb = 0.0
        s_ab = 0.0
        for i in range(k):
            fi = in_first[i]
            for j in range(i + 1, k):
                d = dist[i, j]
                if fi == 1:
                    if in_first[j] == 1:
                        s_aa += d
                    else:
                        s_ab += d
                else:
                    if in_first[j] == 1:
                        s_ab += d
                    else:
                        s_bb += d
        na = float(n_first)
        nb = float(k - n_first)
        out[p] = 2.0 * s_ab / (na * nb) - 2.0 * s_aa / (na * na) - 2.0 * s_bb / (nb * nb)
    return out
