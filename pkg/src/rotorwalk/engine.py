"""Driving particles through a :class:`LatticeState` under a stopping regime."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, FrozenSet, List, Optional, Sequence

import numpy as np

from rotorwalk import _kernels as K
from rotorwalk.lattice import Direction, LatticeState, Site

DEFAULT_BUDGET = 10**12


class StepBudgetExceeded(RuntimeError):
    """A single particle took more steps than the configured guard allows."""

    def __init__(self, steps: int, site: Site):
        super().__init__(f"particle exceeded {steps} steps (now at {site})")
        self.steps = steps
        self.site = site


class RegimeMismatch(ValueError):
    pass


@dataclass(frozen=True)
class StopRegime:
    """When a particle stops.

    kinds: ``absorb-origin-or-escape``, ``escape-only``,
    ``absorb-ball-boundary`` (stop at the first site with ``|x| >= r``),
    ``absorb-custom-set`` (stop on ``sites`` or escape) and ``aggregate``
    (stop on the first site no earlier particle stopped on).
    """

    kind: str
    r: float = 0.0
    sites: FrozenSet[Site] = frozenset()

    _CODES = {"absorb-origin-or-escape": K.REG_ORIGIN, "escape-only": K.REG_ESCAPE,
              "absorb-ball-boundary": K.REG_BALL, "absorb-custom-set": K.REG_SET,
              "aggregate": K.REG_AGG}

    def __post_init__(self) -> None:
        if self.kind not in self._CODES:
            raise ValueError(f"unknown regime {self.kind!r}")
        if self.kind == "absorb-ball-boundary" and not self.r > 0:
            raise ValueError("ball radius must be positive")

    @classmethod
    def origin_or_escape(cls) -> "StopRegime":
        return cls("absorb-origin-or-escape")

    @classmethod
    def escape_only(cls) -> "StopRegime":
        return cls("escape-only")

    @classmethod
    def ball(cls, r: float) -> "StopRegime":
        return cls("absorb-ball-boundary", r=float(r))

    @classmethod
    def custom_set(cls, sites) -> "StopRegime":
        return cls("absorb-custom-set", sites=frozenset(tuple(s) for s in sites))

    @property
    def code(self) -> int:
        return self._CODES[self.kind]


@dataclass(frozen=True)
class WalkOutcome:
    """Terminal status of one particle.

    ``status`` is ``absorbed-origin``, ``absorbed-boundary`` (ball, custom set
    or aggregation stop; ``site`` is where it stopped) or ``escaped`` (``sign``
    of the ray, ``column`` and launch ``site``). ``steps`` counts exits, not
    including the infinite ray.
    """

    status: str
    steps: int
    site: Site
    sign: int = 0

    @property
    def column(self) -> Optional[Site]:
        return self.site[:-1] if self.status == "escaped" else None

    @property
    def escaped(self) -> bool:
        return self.status == "escaped"


_STATUS = {K.OUT_ORIGIN: ("absorbed-origin", 0), K.OUT_BOUNDARY: ("absorbed-boundary", 0),
           K.OUT_UP: ("escaped", 1), K.OUT_DOWN: ("escaped", -1)}


def _prepare(state: LatticeState, regime: StopRegime, source: Site) -> float:
    state.ensure(source)
    if regime.kind == "absorb-ball-boundary":
        R = int(math.ceil(regime.r)) + 1
        state.ensure((R,) * state.d)
        state.ensure((-R,) * state.d)
        return regime.r * regime.r
    if regime.kind == "absorb-custom-set" and state.absorbing != regime.sites:
        state.set_absorbing(sorted(regime.sites))
    if regime.kind == "aggregate":
        state.enable_occupancy()
    return 0.0


def drive(state: LatticeState, regime: StopRegime, target: int, *, by_escapes: bool = False,
          source: Optional[Sequence[int]] = None, budget: int = DEFAULT_BUDGET,
          log: int = 0) -> List[WalkOutcome]:
    """Run particles until ``target`` have finished (or escaped, with ``by_escapes``).

    Counts are cumulative over the state's history. Returns the outcomes of
    up to ``log`` particles finishing during this call.
    """
    d = state.d
    src = np.array(source if source is not None else (0,) * d, dtype=np.int64)
    r2 = _prepare(state, regime, tuple(int(v) for v in src))
    log_status = np.zeros(log, dtype=np.int64)
    log_site = np.zeros((log, d), dtype=np.int64)
    log_steps = np.zeros(log, dtype=np.int64)
    state.stats[K.S_LOG] = 0
    while True:
        ret = K.run(d, state.cyc, state.cpos, state.lo, state.shape, state.strides, state.odo, state.ovr,
                    state.col_hi, state.col_lo, state.up_ray, state.down_ray, state.col_ohi, state.col_olo,
                    state.occ, state.absorb, state.rule.code, regime.code, r2, src, state.pos, state.stats,
                    1 if by_escapes else 0, int(target), int(budget), log_status, log_site, log_steps)
        if ret == K.RET_DONE:
            break
        if ret == K.RET_GROW:
            state.ensure(tuple(int(v) for v in state.pos))
            continue
        raise StepBudgetExceeded(int(state.stats[K.S_CUR]), tuple(int(v) for v in state.pos))
    out = []
    for k in range(int(state.stats[K.S_LOG])):
        status, sign = _STATUS[int(log_status[k])]
        out.append(WalkOutcome(status, int(log_steps[k]), tuple(int(v) for v in log_site[k]), sign))
    return out


def escape_detect(state: LatticeState, x: Sequence[int]) -> int:
    """+1 / -1 if a particle standing at never-exited x escapes straight along +-e_d, else 0.

    A site is a launch site iff every site of its column beyond it (in the
    escape direction) is unexited, carries the default initial rotor pointing
    that way, and is not on an earlier escape ray.
    """
    if state.odometer(x):
        raise ValueError(f"{tuple(x)} has already been exited")
    return state.escape_sign(x)


def run_particle(state: LatticeState, source: Sequence[int], regime: StopRegime, *,
                 budget: int = DEFAULT_BUDGET,
                 trace: Optional[Callable[[Site, Direction, int], None]] = None) -> WalkOutcome:
    """Walk one particle from ``source`` until the regime stops it or it escapes.

    With ``trace`` the walk runs step by step in Python and calls
    ``trace(site, direction, step)`` for every exit; otherwise the compiled
    loop is used. Both paths give identical outcomes and final states.
    """
    if state.stats[K.S_INFLIGHT]:
        raise RuntimeError("a particle is still in flight on this state")
    if trace is None:
        before = int(state.stats[K.S_PARTICLES])
        return drive(state, regime, before + 1, source=source, budget=budget, log=1)[0]
    return _traced(state, tuple(int(v) for v in source), regime, budget, trace)


def _traced(state: LatticeState, src: Site, regime: StopRegime, budget: int, trace) -> WalkOutcome:
    _prepare(state, regime, src)
    d = state.d
    x = list(src)
    steps = 0
    origin = (0,) * d
    while True:
        t = tuple(x)
        u = state.odometer(t)
        if regime.kind == "aggregate":
            state.ensure(t)
            i = state._flat(t)
            if state.occ[i] == 0:
                state.occ[i] = 1
                return _finish(state, WalkOutcome("absorbed-boundary", steps, t))
        elif regime.kind == "absorb-ball-boundary":
            if sum(v * v for v in t) >= regime.r * regime.r:
                return _finish(state, WalkOutcome("absorbed-boundary", steps, t))
        else:
            if regime.kind == "absorb-origin-or-escape" and steps > 0 and t == origin:
                return _finish(state, WalkOutcome("absorbed-origin", steps, t))
            if regime.kind == "absorb-custom-set" and t in regime.sites:
                return _finish(state, WalkOutcome("absorbed-boundary", steps, t))
            if u == 0:
                sg = state.escape_sign(t)
                if sg and any(s[:-1] == t[:-1] and (s[-1] - t[-1]) * sg > 0 for s in regime.sites):
                    sg = 0
                if sg:
                    state.ensure(t)
                    c = state._col(t)
                    (state.up_ray if sg > 0 else state.down_ray)[c] = t[-1]
                    state.stats[K.S_BREADTH] = max(state.breadth, max(abs(v) for v in t[:-1]))
                    return _finish(state, WalkOutcome("escaped", steps, t, sg))
        if steps >= budget:
            raise StepBudgetExceeded(steps, t)
        e = state.exit_once(t)
        trace(t, e, steps)
        x[e.axis] += e.sign
        steps += 1
        state.stats[K.S_STEPS] += 1


def _finish(state: LatticeState, out: WalkOutcome) -> WalkOutcome:
    s = state.stats
    s[K.S_PARTICLES] += 1
    if out.status == "absorbed-origin":
        s[K.S_ORIGIN] += 1
    elif out.status == "absorbed-boundary":
        s[K.S_OTHER] += 1
    else:
        s[K.S_ESCAPES] += 1
        s[K.S_UP if out.sign > 0 else K.S_DOWN] += 1
    return out


# -- odometer / flux accounting ---------------------------------------------

def ball_sites(d: int, r: float) -> np.ndarray:
    """All sites with |x| < r, as a (k, d) integer array in lexicographic order."""
    R = int(math.ceil(r))
    ax = np.arange(-R, R + 1)
    grid = np.stack(np.meshgrid(*([ax] * d), indexing="ij"), axis=-1).reshape(-1, d)
    return grid[(grid.astype(float) ** 2).sum(axis=1) < r * r]


def _edge_terms(state: LatticeState, r: float, include_boundary: bool):
    """Yield per-edge arrays (x, y, grad_u, K) for edges x -> x+e_a, a = 0..d-1."""
    d = state.d
    R = int(math.ceil(r)) + 1
    lo, hi = (-R,) * d, (R,) * d
    u = state.odometer_grid(lo, hi) if state.contains(lo) and state.contains(hi) else None
    if u is None:
        state.ensure(lo)
        state.ensure(hi)
        u = state.odometer_grid(lo, hi)
    ax = np.arange(-R, R + 1)
    coords = np.stack(np.meshgrid(*([ax] * d), indexing="ij"), axis=-1)
    inball = (coords.astype(float) ** 2).sum(axis=-1) < r * r
    n = 2 * d
    # initial cycle position per site
    init = np.where(coords[..., -1] >= 0, 2 * (d - 1), 2 * (d - 1) + 1)
    if state.rule.default == "uniform-up":
        init[...] = 2 * (d - 1)
    for x, e in state.rule.overrides.items():
        if all(-R <= v <= R for v in x):
            init[tuple(v + R for v in x)] = e.index
    p0 = state.cpos[init]

    def exits_toward(k: int) -> np.ndarray:
        q = (int(state.cpos[k]) - p0) % n
        return (u - q + n - 1) // n

    for a in range(d):
        sl_x = [slice(None)] * d
        sl_y = [slice(None)] * d
        sl_x[a] = slice(0, -1)
        sl_y[a] = slice(1, None)
        sx, sy = tuple(sl_x), tuple(sl_y)
        fwd = exits_toward(2 * a)[sx]
        back = exits_toward(2 * a + 1)[sy]
        grad = u[sy] - u[sx]
        Kf = fwd - back
        mask = (inball[sx] & inball[sy]) if not include_boundary else (inball[sx] | inball[sy])
        yield a, coords[sx][mask], grad[mask], Kf[mask]


def flux_residual(state: LatticeState, r: float, *, include_boundary: bool = False,
                  field: bool = False):
    """max over edges of |grad u(x,y) + 2d K(x,y)| for a ball-stopped experiment.

    ``K(x,y)`` is the net number of crossings ``x -> y``. Edges have both
    ends in ``B_r`` unless ``include_boundary``. With ``field=True`` also
    returns ``{(x, y): residual}``.
    """
    if state.stats[K.S_ESCAPES] or state.stats[K.S_ORIGIN]:
        raise RegimeMismatch("state has escape or origin-absorption events; not a ball experiment")
    d = state.d
    worst = 0
    out = {}
    for a, xs, grad, Kf in _edge_terms(state, r, include_boundary):
        res = np.abs(grad + 2 * d * Kf)
        if res.size:
            worst = max(worst, int(res.max()))
        if field:
            for x, v in zip(xs, res):
                xt = tuple(int(c) for c in x)
                y = list(xt)
                y[a] += 1
                out[(xt, tuple(y))] = int(v)
    return (worst, out) if field else worst


def net_flux(state: LatticeState, x: Sequence[int], y: Sequence[int]) -> int:
    """K(x, y) = exits x->y minus exits y->x for neighbouring x, y."""
    diff = [b - a for a, b in zip(x, y)]
    if sorted(map(abs, diff)) != [0] * (len(diff) - 1) + [1]:
        raise ValueError("x and y are not neighbours")
    a = next(i for i, v in enumerate(diff) if v)
    e = Direction(a, diff[a])
    return state.exits(x)[e.index] - state.exits(y)[(-e).index]
