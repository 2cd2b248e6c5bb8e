"""Multi-particle protocols: escape counts, odometers, heights, breadth and aggregation.

Every protocol is deterministic given (d, order, rule); there is no seed.
Checkpoint values are cumulative over a single state, so a series up to
``n_max`` costs the same as one run of ``n_max`` particles.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from typing import Callable, Dict, FrozenSet, Iterable, List, Optional, Sequence

import numpy as np

from rotorwalk import _kernels as K
from rotorwalk.engine import DEFAULT_BUDGET, StopRegime, drive
from rotorwalk.potential import exact_green, unit_ball_volume
from rotorwalk.lattice import CyclicOrder, InitialRule, LatticeState, Site, ccw, validate_order

CSV_SCHEMA_VERSION = 1
CSV_COLUMNS = ("n", "I", "u0", "h_plus", "h_minus", "breadth", "steps", "normalized_rate")


def geometric_checkpoints(n_max: int, base: float = 1.3, extra: Iterable[int] = ()) -> List[int]:
    """``ceil(base**k)`` for k = 0, 1, ... up to ``n_max`` (deduplicated), plus ``extra`` and ``n_max``."""
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    pts = set()
    k = 0
    while True:
        v = math.ceil(base ** k)
        if v > n_max:
            break
        pts.add(v)
        k += 1
    pts.update(int(e) for e in extra if 1 <= int(e) <= n_max)
    pts.add(int(n_max))
    return sorted(pts)


@dataclass(frozen=True)
class Checkpoint:
    n: int
    I: int
    u0: int
    h_plus: int
    h_minus: int
    breadth: int
    steps: int


@dataclass
class ExperimentSeries:
    """Checkpointed measurements of one run.

    ``metadata`` carries d, the explicit cycle, the rule, the regime and a
    determinism tag. ``dual`` optionally holds an escape-only series for the
    dual normalisation.
    """

    checkpoints: List[Checkpoint]
    metadata: Dict[str, object]
    dual: Optional["ExperimentSeries"] = None
    state: Optional[LatticeState] = field(default=None, repr=False, compare=False)

    @property
    def d(self) -> int:
        return int(self.metadata["d"])

    def at(self, n: int) -> Checkpoint:
        for c in self.checkpoints:
            if c.n == n:
                return c
        raise KeyError(f"no checkpoint at n={n}")

    def check_invariants(self, *, breadth_bound: Optional[bool] = None) -> None:
        """Raise AssertionError if a hard per-checkpoint invariant fails.

        The breadth bound ``breadth <= n`` is checked for d = 2 under the
        rho0 rule unless ``breadth_bound`` says otherwise.
        """
        prev = 0
        if breadth_bound is None:
            breadth_bound = self.d == 2 and self.metadata.get("rule") == "rho0"
        for c in self.checkpoints:
            if c.n <= prev:
                raise AssertionError(f"checkpoints not strictly increasing at n={c.n}")
            prev = c.n
            if not 0 <= c.I <= c.n:
                raise AssertionError(f"I={c.I} outside [0, n] at n={c.n}")
            if c.h_plus > c.n or c.h_minus > c.n:
                raise AssertionError(f"height bound violated at n={c.n}: h+={c.h_plus}, h-={c.h_minus}")
            if breadth_bound and c.breadth > c.n:
                raise AssertionError(f"breadth {c.breadth} exceeds n={c.n}")

    # -- export ------------------------------------------------------------
    def to_csv(self) -> str:
        norm = dict((p.n, p.rate) for p in rate_normalizer(self))
        buf = io.StringIO()
        buf.write(f"# schema_version={CSV_SCHEMA_VERSION}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for c in self.checkpoints:
            r = norm.get(c.n)
            w.writerow([c.n, c.I, c.u0, c.h_plus, c.h_minus, c.breadth, c.steps,
                        "" if r is None else repr(r)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, metadata: Dict[str, object]) -> "ExperimentSeries":
        rows = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
        reader = csv.DictReader(rows)
        cps = [Checkpoint(*(int(row[k]) for k in CSV_COLUMNS[:7])) for row in reader]
        return cls(cps, dict(metadata))

    def write(self, directory: str, stem: str = "series") -> Dict[str, str]:
        """Write ``<stem>.csv`` and ``<stem>.json`` atomically; returns the paths."""
        os.makedirs(directory, exist_ok=True)
        paths = {"csv": os.path.join(directory, stem + ".csv"),
                 "json": os.path.join(directory, stem + ".json")}
        atomic_write(paths["csv"], self.to_csv())
        meta = dict(self.metadata)
        meta["csv_schema_version"] = CSV_SCHEMA_VERSION
        meta["columns"] = list(CSV_COLUMNS)
        atomic_write(paths["json"], json.dumps(meta, indent=2, sort_keys=True) + "\n")
        if self.dual is not None:
            paths.update({f"dual_{k}": v for k, v in self.dual.write(directory, stem + "_dual").items()})
        return paths


def atomic_write(path: str, text: str) -> None:
    """Write via a temporary file in the same directory, then rename over ``path``."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _metadata(state: LatticeState, regime: str) -> Dict[str, object]:
    return {"d": state.d, "order": str(state.order), "rule": state.rule.describe(),
            "regime": regime, "axis_permutation": list(state.axis_permutation),
            "determinism": "seedless", "boundary_tie": "|x| >= r absorbs"}


def _snapshot(state: LatticeState, n: int) -> Checkpoint:
    return Checkpoint(n, int(state.stats[K.S_ESCAPES]), state.odometer((0,) * state.d),
                      state.h_plus, state.h_minus, state.breadth, state.total_steps)


def _new_state(d: int, order: Optional[CyclicOrder], rule: Optional[InitialRule]) -> LatticeState:
    st = LatticeState(d, order if order is not None else ccw(d), rule)
    if not validate_order(st.order).ok:
        raise ValueError(f"order {order} does not separate e_d from -e_d")
    return st


def escape_rate_series(d: int, order: Optional[CyclicOrder] = None, rule: Optional[InitialRule] = None,
                       n_max: int = 1000, checkpoints: Optional[Sequence[int]] = None, *,
                       budget: int = DEFAULT_BUDGET, state: Optional[LatticeState] = None,
                       progress: Optional[Callable[[Checkpoint], None]] = None) -> ExperimentSeries:
    """I(rho, n): launch particles one at a time, each stopping on return to 0 or escape.

    ``u0`` in this regime equals n since absorption does not turn the origin rotor.
    """
    st = state if state is not None else _new_state(d, order, rule)
    cps = sorted(set(checkpoints)) if checkpoints else geometric_checkpoints(n_max)
    reg = StopRegime.origin_or_escape()
    out = []
    for n in cps:
        drive(st, reg, n, budget=budget)
        cp = _snapshot(st, n)
        out.append(cp)
        if progress:
            progress(cp)
    return ExperimentSeries(out, _metadata(st, reg.kind), state=st)


def escape_only_series(d: int, order: Optional[CyclicOrder] = None, rule: Optional[InitialRule] = None,
                       n_max: int = 1000, checkpoints: Optional[Sequence[int]] = None, *,
                       budget: int = DEFAULT_BUDGET, state: Optional[LatticeState] = None,
                       progress: Optional[Callable[[Checkpoint], None]] = None) -> ExperimentSeries:
    """u_n(0): particles pass through the origin and stop only by escaping.

    At checkpoint n exactly n particles have escaped (I = n) and ``u0`` is the
    origin's odometer.
    """
    st = state if state is not None else _new_state(d, order, rule)
    cps = sorted(set(checkpoints)) if checkpoints else geometric_checkpoints(n_max)
    reg = StopRegime.escape_only()
    out = []
    for n in cps:
        drive(st, reg, n, budget=budget)
        cp = _snapshot(st, n)
        out.append(cp)
        if progress:
            progress(cp)
    return ExperimentSeries(out, _metadata(st, reg.kind), state=st)


def escape_count(d: int, n: int, order: Optional[CyclicOrder] = None,
                 rule: Optional[InitialRule] = None, *, budget: int = DEFAULT_BUDGET) -> int:
    """I(rho, n) from a fresh state."""
    st = _new_state(d, order, rule)
    drive(st, StopRegime.origin_or_escape(), n, budget=budget)
    return int(st.stats[K.S_ESCAPES])


# -- ball odometer -----------------------------------------------------------

@dataclass
class BallOdometer:
    """u_n^r on the box ``[-R, R]^d`` (R = ceil(r) + 1); ``odometer[x + R]`` is u(x)."""

    d: int
    n: int
    r: float
    odometer: np.ndarray
    state: LatticeState = field(repr=False)

    @property
    def R(self) -> int:
        return (self.odometer.shape[0] - 1) // 2

    def at(self, x: Sequence[int]) -> int:
        R = self.R
        if any(abs(v) > R for v in x):
            return 0
        return int(self.odometer[tuple(v + R for v in x)])

    def sphere(self, rho: float) -> np.ndarray:
        """Sites of the inner boundary layer ``rho <= |x| < rho + 1``."""
        R = self.R
        ax = np.arange(-R, R + 1)
        g = np.stack(np.meshgrid(*([ax] * self.d), indexing="ij"), axis=-1).reshape(-1, self.d)
        nn = np.sqrt((g.astype(float) ** 2).sum(axis=1))
        return g[(nn >= rho) & (nn < rho + 1)]

    def green_gap(self) -> Dict[str, float]:
        """|u(0) - n G_r(0,0)| diagnostics against the exact Green function."""
        g = exact_green(self.d, self.r, (0,) * self.d, (0,) * self.d)
        u0 = self.at((0,) * self.d)
        return {"u0": float(u0), "nG": self.n * g, "gap": abs(u0 - self.n * g), "G00": g}


def ball_odometer(d: int, order: Optional[CyclicOrder] = None, rule: Optional[InitialRule] = None,
                  n: int = 1, r: float = 10.0, *, budget: int = DEFAULT_BUDGET,
                  state: Optional[LatticeState] = None) -> BallOdometer:
    """Run n particles from 0, each stopping at the first site with ``|x| >= r``."""
    if r < 1:
        raise ValueError("r must be >= 1")
    st = state if state is not None else _new_state(d, order, rule)
    drive(st, StopRegime.ball(r), n, budget=budget)
    R = int(math.ceil(r)) + 1
    grid = st.odometer_grid((-R,) * d, (R,) * d)
    return BallOdometer(d, n, float(r), grid, st)


# -- aggregation ---------------------------------------------------------------

@dataclass
class AggregationResult:
    """A_n with its radii.

    ``inradius`` is the largest r with ``B_r`` inside the cluster, which is
    the distance to the nearest unoccupied site; ``outradius`` is the
    smallest r with the cluster inside the closed ball of radius r, i.e. the
    largest occupied distance.
    """

    d: int
    n: int
    sites: np.ndarray  # (n, d), lexicographic
    inradius: float
    outradius: float
    state: Optional[LatticeState] = field(default=None, repr=False)

    @property
    def cluster(self) -> FrozenSet[Site]:
        return frozenset(tuple(int(v) for v in s) for s in self.sites)

    @property
    def volume_radius(self) -> float:
        """(n / omega_d)^(1/d)."""
        return (self.n / unit_ball_volume(self.d)) ** (1 / self.d)

    def raster(self) -> np.ndarray:
        """0/1 occupancy image for d = 2, rows indexed by x_2 (top = largest)."""
        if self.d != 2:
            raise ValueError("raster is defined for d = 2")
        lo = self.sites.min(axis=0)
        hi = self.sites.max(axis=0)
        img = np.zeros((hi[1] - lo[1] + 1, hi[0] - lo[0] + 1), dtype=np.uint8)
        img[hi[1] - self.sites[:, 1], self.sites[:, 0] - lo[0]] = 1
        return img


def cluster_radii(sites: np.ndarray) -> tuple:
    """(inradius, outradius) of a finite site set containing the origin."""
    d = sites.shape[1]
    out = float(np.sqrt((sites.astype(float) ** 2).sum(axis=1)).max())
    R = int(math.ceil(out)) + 1
    shape = (2 * R + 1,) * d
    occ = np.zeros(shape, dtype=bool)
    occ[tuple((sites + R).T)] = True
    ax = np.arange(-R, R + 1, dtype=float)
    dist2 = sum(np.meshgrid(*([ax ** 2] * d), indexing="ij"))
    inr = float(np.sqrt(dist2[~occ].min()))
    return inr, out


def aggregate(d: int, order: Optional[CyclicOrder] = None, rule: Optional[InitialRule] = None,
              n: int = 1, *, budget: int = DEFAULT_BUDGET,
              state: Optional[LatticeState] = None) -> AggregationResult:
    """Rotor-router aggregation: each particle stops on the first never-occupied site."""
    if n < 1:
        raise ValueError("n must be >= 1")
    st = state if state is not None else _new_state(d, order, rule)
    drive(st, StopRegime("aggregate"), n, budget=budget)
    sh, _ = st._grids()
    idx = np.flatnonzero(st.occ)
    sites = (np.stack(np.unravel_index(idx, sh), axis=1).astype(np.int64) + st.lo)
    sites = sites[np.lexsort(sites.T[::-1])]
    inr, outr = cluster_radii(sites)
    return AggregationResult(d, n, sites, inr, outr, st)


# -- normalisation -----------------------------------------------------------------

@dataclass(frozen=True)
class NormalizedPoint:
    n: int
    rate: float
    dual: Optional[float] = None


def _quotient(d: int, n: int, x: int) -> Optional[float]:
    """n log x / x (d = 2) or n / x (d >= 3); None where undefined."""
    if x <= 0:
        return None
    if d == 2:
        if x < 2:
            return None
        return n * math.log(x) / x
    return n / x


def rate_normalizer(series: ExperimentSeries) -> List[NormalizedPoint]:
    """I log n / n (d = 2) or I / n (d >= 3) per checkpoint.

    With an attached escape-only ``dual``, the point at n also carries the
    dual quotient ``m log u / u`` (or ``m / u``) read from the dual
    checkpoint at m = I(n) escapes, where u = u_m(0). Since
    ``I(rho, u_m(0)) = m``, u lies on the plateau of particle counts that
    produce the same escape count as n.
    """
    d = series.d
    duals = {c.n: c for c in series.dual.checkpoints} if series.dual is not None else {}
    out = []
    for c in series.checkpoints:
        if d == 2 and c.n < 2:
            continue
        rate = _quotient(d, c.I, c.n)
        dc = duals.get(c.I)
        dual = _quotient(d, dc.n, dc.u0) if dc is not None else None
        out.append(NormalizedPoint(c.n, rate, dual))
    return out
