"""Compiled inner loops for rotor walks on a dense block of Z^d.

Sites are flattened with the last axis (x_d) fastest, so the column of a
site is ``flat // shape[d-1]``. All arrays are owned by a
:class:`rotorwalk.lattice.LatticeState`; these functions never allocate.
"""

import numpy as np
from numba import njit

INT64_MAX = np.iinfo(np.int64).max
INT64_MIN = np.iinfo(np.int64).min

# column sentinels
NONE_HI = INT64_MIN  # no exited site in column (max)
NONE_LO = INT64_MAX  # no exited site in column (min)
NO_UP = INT64_MAX  # no upward escape ray; up_ray[c] <= z is then never true
NO_DOWN = INT64_MIN  # no downward escape ray

RULE_RHO0 = 0
RULE_UP = 1

REG_ORIGIN = 0  # absorb on return to the origin, or escape
REG_ESCAPE = 1  # escape only
REG_BALL = 2  # absorb at |x| >= r
REG_SET = 3  # absorb on a finite site set, or escape
REG_AGG = 4  # stop on the first unoccupied site

OUT_ORIGIN = 0
OUT_BOUNDARY = 1
OUT_UP = 2
OUT_DOWN = 3

RET_DONE = 0
RET_GROW = 1
RET_BUDGET = 2

S_PARTICLES = 0
S_ESCAPES = 1
S_UP = 2
S_DOWN = 3
S_ORIGIN = 4
S_OTHER = 5
S_STEPS = 6
S_HPLUS = 7
S_HMINUS = 8
S_BREADTH = 9
S_INFLIGHT = 10
S_CUR = 11
S_LOG = 12
NSTATS = 13


@njit(cache=True, nogil=True, inline="never")
def _initial(i, z, ovr, rule, d):
    if ovr.size > 1 and ovr[i] >= 0:
        return ovr[i]
    if rule == RULE_UP or z >= 0:
        return 2 * (d - 1)
    return 2 * (d - 1) + 1


@njit(cache=True, nogil=True, inline="never")
def escape_sign(i, z, c, init, d, ovr, col_hi, col_lo, up_ray, down_ray, col_ohi, col_olo, rule):
    """Sign of the straight escape from a never-exited site (flat i, height z, column c).

    ``init`` is the site's initial rotor (direction index). The site launches
    upward iff that rotor is +e_d and every site above it is unexited, off any
    earlier ray and starts at +e_d; downward likewise. Sites whose start
    differs from the default can only be overrides, so the scan is bounded by
    the column's override range. c < 0 means the column holds no exits, rays
    or overrides (and i is unused).
    """
    upk = 2 * (d - 1)
    if init == upk:
        if c >= 0 and (up_ray[c] != NO_UP or z <= col_hi[c]):
            return 0
        top = z if rule == RULE_UP else -1  # default start is +e_d above top
        if c >= 0 and col_ohi[c] > top:
            top = col_ohi[c]
        for t in range(z + 1, top + 1):
            if _initial(i + t - z, t, ovr, rule, d) != upk:
                return 0
        return 1
    if init == upk + 1:
        if rule == RULE_UP:
            return 0  # default start below is +e_d on infinitely many sites
        if c >= 0 and (down_ray[c] != NO_DOWN or z >= col_lo[c]):
            return 0
        bot = z if z < 0 else 0
        if c >= 0 and col_olo[c] < bot:
            bot = col_olo[c]
        for t in range(bot, z):
            if _initial(i + t - z, t, ovr, rule, d) != upk + 1:
                return 0
        return -1
    return 0


@njit(cache=True, nogil=True, inline="never")
def _ray_clear(absorb, i, k, nz, sg):
    """sg if no absorbing site lies beyond flat i (offset k in its column) along sg, else 0."""
    j = k + sg
    while 0 <= j < nz:
        if absorb[i + j - k] != 0:
            return 0
        j += sg
    return sg


@njit(cache=True, nogil=True, inline="never")
def _do_exit(d, cyc, cpos, odo, ovr, col_hi, col_lo, rule, i, c, z, u, x, stats):
    """Exit a site (flat i, column c, effective odometer u); returns the direction index."""
    p = (cpos[_initial(i, z, ovr, rule, d)] + u) % (2 * d)
    k = cyc[p]
    odo[i] += 1
    if z > col_hi[c]:
        col_hi[c] = z
    if z < col_lo[c]:
        col_lo[c] = z
    if u == 0:
        b = stats[S_BREADTH]
        for a in range(d - 1):
            v = x[a] if x[a] >= 0 else -x[a]
            if v > b:
                b = v
        stats[S_BREADTH] = b
    elif u == 1:
        if z >= 0:
            if z > stats[S_HPLUS]:
                stats[S_HPLUS] = z
        elif -z > stats[S_HMINUS]:
            stats[S_HMINUS] = -z
    return k


@njit(cache=True, nogil=True)
def exit_site(d, cyc, cpos, lo, shape, strides, odo, ovr, col_hi, col_lo, up_ray, down_ray, rule, x, stats):
    """Single exit at x, which must lie inside the block."""
    i = 0
    for a in range(d):
        i += (x[a] - lo[a]) * strides[a]
    c = i // shape[d - 1]
    z = x[d - 1]
    u = odo[i]
    if up_ray[c] <= z:
        u += 1
    if down_ray[c] >= z:
        u += 1
    return _do_exit(d, cyc, cpos, odo, ovr, col_hi, col_lo, rule, i, c, z, u, x, stats)


@njit(cache=True, nogil=True)
def run(d, cyc, cpos, lo, shape, strides, odo, ovr, col_hi, col_lo, up_ray, down_ray, col_ohi, col_olo,
        occ, absorb, rule, regime, r2, src, pos, stats, target_kind, target, budget,
        log_status, log_site, log_steps):
    """Launch particles from ``src`` one at a time until the target count is met.

    target_kind 0 counts finished particles, 1 counts escapes. Returns
    RET_GROW when the walker steps outside the block (it is parked in ``pos``
    and resumes on the next call) and RET_BUDGET when one particle exceeds
    ``budget`` steps.
    """
    n = 2 * d
    nz = shape[d - 1]
    pow2 = (n & (n - 1)) == 0
    dflat = np.empty(n, np.int64)
    dcol = np.empty(n, np.int64)
    for k in range(n):
        a = k >> 1
        sg = 1 - 2 * (k & 1)
        dflat[k] = sg * strides[a]
        dcol[k] = 0 if a == d - 1 else sg * (strides[a] // nz)
    has_ovr = ovr.size > 1
    has_abs = absorb.size > 1
    steps = stats[S_STEPS]
    hp = stats[S_HPLUS]
    hm = stats[S_HMINUS]
    br = stats[S_BREADTH]
    inflight = stats[S_INFLIGHT]
    cur = stats[S_CUR]
    ret = -1
    while ret < 0:
        if inflight == 0:
            if target_kind == 0:
                if stats[S_PARTICLES] >= target:
                    ret = RET_DONE
                    break
            elif stats[S_ESCAPES] >= target:
                ret = RET_DONE
                break
            for a in range(d):
                pos[a] = src[a]
            inflight = 1
            cur = 0
        # locate the walker in the block
        i = 0
        s2 = 0
        for a in range(d):
            off = pos[a] - lo[a]
            if off < 0 or off >= shape[a]:
                ret = RET_GROW
            i += off * strides[a]
            s2 += pos[a] * pos[a]
        if ret >= 0:
            break
        z = pos[d - 1]
        c = i // nz
        while True:
            stored = odo[i]
            u = stored
            if up_ray[c] <= z:
                u += 1
            if down_ray[c] >= z:
                u += 1

            outcome = -1
            if regime == REG_BALL:
                if float(s2) >= r2:
                    outcome = OUT_BOUNDARY
            elif regime == REG_AGG:
                if occ[i] == 0:
                    occ[i] = 1
                    outcome = OUT_BOUNDARY
            else:
                if regime == REG_ORIGIN and s2 == 0 and cur > 0:
                    outcome = OUT_ORIGIN
                elif regime == REG_SET and has_abs and absorb[i] != 0:
                    outcome = OUT_BOUNDARY
                elif u == 0:
                    sg = escape_sign(i, z, c, _initial(i, z, ovr, rule, d), d, ovr, col_hi, col_lo, up_ray, down_ray,
                                     col_ohi, col_olo, rule)
                    if sg != 0 and has_abs and regime == REG_SET:
                        sg = _ray_clear(absorb, i, z - lo[d - 1], nz, sg)
                    if sg != 0:
                        if sg > 0:
                            up_ray[c] = z
                            outcome = OUT_UP
                        else:
                            down_ray[c] = z
                            outcome = OUT_DOWN
                        for a in range(d - 1):
                            v = pos[a] if pos[a] >= 0 else -pos[a]
                            if v > br:
                                br = v

            if outcome >= 0:
                k = stats[S_LOG]
                if k < log_status.size:
                    log_status[k] = outcome
                    for a in range(d):
                        log_site[k, a] = pos[a]
                    log_steps[k] = cur
                    stats[S_LOG] = k + 1
                stats[S_PARTICLES] += 1
                if outcome == OUT_ORIGIN:
                    stats[S_ORIGIN] += 1
                elif outcome == OUT_BOUNDARY:
                    stats[S_OTHER] += 1
                else:
                    stats[S_ESCAPES] += 1
                    if outcome == OUT_UP:
                        stats[S_UP] += 1
                    else:
                        stats[S_DOWN] += 1
                inflight = 0
                break
            if cur >= budget:
                ret = RET_BUDGET
                break

            # exit along the current rotor, then turn it
            if has_ovr and ovr[i] >= 0:
                e0 = ovr[i]
            elif rule == RULE_UP or z >= 0:
                e0 = 2 * (d - 1)
            else:
                e0 = 2 * (d - 1) + 1
            if pow2:
                p = (cpos[e0] + u) & (n - 1)
            else:
                p = (cpos[e0] + u) % n
            k = cyc[p]
            odo[i] = stored + 1
            if z > col_hi[c]:
                col_hi[c] = z
            if z < col_lo[c]:
                col_lo[c] = z
            if u == 0:
                for a in range(d - 1):
                    v = pos[a] if pos[a] >= 0 else -pos[a]
                    if v > br:
                        br = v
            elif u == 1:
                if z >= 0:
                    if z > hp:
                        hp = z
                elif -z > hm:
                    hm = -z

            ax = k >> 1
            xa = pos[ax]
            if k & 1:
                s2 += 1 - 2 * xa
                xa -= 1
            else:
                s2 += 1 + 2 * xa
                xa += 1
            pos[ax] = xa
            cur += 1
            steps += 1
            off = xa - lo[ax]
            if off < 0 or off >= shape[ax]:
                ret = RET_GROW
                break
            i += dflat[k]
            c += dcol[k]
            if ax == d - 1:
                z = xa

    stats[S_STEPS] = steps
    stats[S_HPLUS] = hp
    stats[S_HMINUS] = hm
    stats[S_BREADTH] = br
    stats[S_INFLIGHT] = inflight
    stats[S_CUR] = cur
    return ret
