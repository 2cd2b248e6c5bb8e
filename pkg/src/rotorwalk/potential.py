"""Random-walk baselines and exact discrete potential theory on finite regions.

Green functions count expected visits: ``G_r(x, y)`` is the mean number of
times simple random walk from x visits y before leaving ``B_r = {|x| < r}``,
so ``G(., y) = 1_y + P G(., y)`` on ``B_r`` and vanishes outside.
"""

from __future__ import annotations

import functools
import math
import os
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numba import njit

Site = Tuple[int, ...]

RESIDUAL_TOL = 1e-10
MAX_SITES = 3_000_000
DIRECT_LIMIT = 40_000  # unknowns; above this (d >= 3) use AMG-preconditioned CG


class RegionTooLarge(ValueError):
    pass


class CalibrationMissing(LookupError):
    pass


def unit_ball_volume(d: int) -> float:
    """omega_d, the volume of the Euclidean unit ball in R^d."""
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


# -- linear solves ---------------------------------------------------------------

class _Operator:
    """``I - P`` restricted to an interior set, with a reusable solver."""

    def __init__(self, A: sp.csr_matrix, symmetric: bool = True):
        self.A = A.tocsr()
        self.n = A.shape[0]
        self._lu = None
        self._amg = None
        self.symmetric = symmetric

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if self.n <= DIRECT_LIMIT or not self.symmetric:
            if self._lu is None:
                try:
                    self._lu = spla.splu(self.A.tocsc())
                except RuntimeError as exc:  # singular: some interior part cannot reach the boundary
                    raise ValueError("region has an interior component without boundary contact") from exc
            x = self._lu.solve(b)
            for _ in range(5):
                res = b - self.A @ x
                if np.abs(res).max() <= RESIDUAL_TOL * 0.1:
                    break
                x += self._lu.solve(res)
            return x
        if self._amg is None:
            import pyamg

            self._amg = pyamg.smoothed_aggregation_solver(self.A, symmetry="symmetric")
        x = self._amg.solve(b, tol=1e-13, accel="cg", maxiter=1000)
        for _ in range(10):
            res = b - self.A @ x
            if np.abs(res).max() <= RESIDUAL_TOL * 0.1:
                break
            x += self._amg.solve(res, tol=1e-13, accel="cg", maxiter=1000)
        return x

    def residual(self, x: np.ndarray, b: np.ndarray) -> float:
        return float(np.abs(self.A @ x - b).max()) if self.n else 0.0


# -- lattice regions -------------------------------------------------------------------

class Region:
    """A finite interior set of Z^d with its outer vertex boundary.

    Sites live in the box ``lo + [0, shape)``; ``index`` maps box cells to
    interior numbers (-1 elsewhere) and ``bindex`` to boundary numbers.
    """

    def __init__(self, d: int, interior: np.ndarray):
        interior = np.asarray(interior, dtype=np.int64).reshape(-1, d)
        if len(interior) == 0:
            raise ValueError("empty region")
        if len(interior) > MAX_SITES:
            raise RegionTooLarge(f"{len(interior)} sites exceeds the exact-solve limit {MAX_SITES}")
        self.d = d
        self.lo = interior.min(axis=0) - 1
        self.shape = tuple(int(v) for v in interior.max(axis=0) - self.lo + 2)
        self.interior = interior
        self.index = np.full(self.shape, -1, dtype=np.int64)
        self.index[tuple((interior - self.lo).T)] = np.arange(len(interior))
        if (self.index >= 0).sum() != len(interior):
            raise ValueError("duplicate interior sites")
        inside = self.index >= 0
        bmask = np.zeros(self.shape, dtype=bool)
        for a in range(d):
            for s in (1, -1):
                bmask |= np.roll(inside, s, axis=a)
        bmask &= ~inside
        self.boundary = np.argwhere(bmask).astype(np.int64) + self.lo
        self.bindex = np.full(self.shape, -1, dtype=np.int64)
        self.bindex[tuple((self.boundary - self.lo).T)] = np.arange(len(self.boundary))
        self._op: Optional[_Operator] = None

    @classmethod
    def ball(cls, d: int, r: float, center: Optional[Sequence[int]] = None) -> "Region":
        """``B_r = {x : |x - center| < r}``."""
        R = int(math.ceil(r))
        ax = np.arange(-R, R + 1)
        g = np.stack(np.meshgrid(*([ax] * d), indexing="ij"), axis=-1).reshape(-1, d)
        g = g[(g.astype(float) ** 2).sum(axis=1) < r * r]
        if center is not None:
            g = g + np.asarray(center, dtype=np.int64)
        return cls(d, g)

    def __len__(self) -> int:
        return len(self.interior)

    def _cell(self, x: Sequence[int]) -> Optional[Tuple[int, ...]]:
        c = tuple(int(v) - int(l) for v, l in zip(x, self.lo))
        if all(0 <= c[a] < self.shape[a] for a in range(self.d)):
            return c
        return None

    def interior_index(self, x: Sequence[int]) -> int:
        c = self._cell(x)
        return -1 if c is None else int(self.index[c])

    def boundary_index(self, x: Sequence[int]) -> int:
        c = self._cell(x)
        return -1 if c is None else int(self.bindex[c])

    def _edges(self):
        """(interior i, interior j) and (interior i, boundary k) neighbour pairs."""
        ii, jj, bi, bk = [], [], [], []
        cells = self.interior - self.lo
        for a in range(self.d):
            for s in (1, -1):
                nb = cells.copy()
                nb[:, a] += s
                t = tuple(nb.T)
                j = self.index[t]
                k = self.bindex[t]
                src = np.arange(len(cells))
                ii.append(src[j >= 0])
                jj.append(j[j >= 0])
                bi.append(src[k >= 0])
                bk.append(k[k >= 0])
        return np.concatenate(ii), np.concatenate(jj), np.concatenate(bi), np.concatenate(bk)

    @property
    def operator(self) -> _Operator:
        if self._op is None:
            n = len(self)
            ii, jj, bi, bk = self._edges()
            self._bedges = (bi, bk)
            P = sp.csr_matrix((np.full(len(ii), 1.0 / (2 * self.d)), (ii, jj)), shape=(n, n))
            self._op = _Operator(sp.identity(n, format="csr") - P)
        return self._op

    def boundary_rhs(self, data: np.ndarray) -> np.ndarray:
        """Contribution ``(1/2d) sum_{boundary nbrs} data`` to each interior equation."""
        self.operator
        bi, bk = self._bedges
        return np.bincount(bi, weights=np.asarray(data, dtype=float)[bk], minlength=len(self)) / (2 * self.d)


@functools.lru_cache(maxsize=8)
def ball_region(d: int, r: float) -> Region:
    return Region.ball(d, r)


# -- Green functions -----------------------------------------------------------------------

def _norm(x: Sequence[int]) -> float:
    return math.sqrt(sum(float(v) * float(v) for v in x))


def green_field(d: int, r: float, y: Sequence[int]) -> np.ndarray:
    """``G_r(., y)`` on the interior of ``ball_region(d, r)`` (interior ordering)."""
    reg = ball_region(d, float(r))
    j = reg.interior_index(y)
    if j < 0:
        raise ValueError(f"{tuple(y)} is not in B_{r}")
    b = np.zeros(len(reg))
    b[j] = 1.0
    g = reg.operator.solve(b)
    res = reg.operator.residual(g, b)
    if res > RESIDUAL_TOL:
        raise ArithmeticError(f"Green solve residual {res:.3e} above {RESIDUAL_TOL}")
    return g


@functools.lru_cache(maxsize=64)
def _green_cached(d: int, r: float, y: Site) -> np.ndarray:
    g = green_field(d, r, y)
    g.setflags(write=False)
    return g


def exact_green(d: int, r: float, x: Sequence[int], y: Sequence[int]) -> float:
    """Expected visits to y before leaving ``B_r``, for simple random walk from x."""
    reg = ball_region(d, float(r))
    i = reg.interior_index(x)
    if i < 0 or reg.interior_index(y) < 0:
        raise ValueError(f"x={tuple(x)} and y={tuple(y)} must lie in B_{r}")
    return float(_green_cached(d, float(r), tuple(int(v) for v in y))[i])


def green_residual(d: int, r: float, y: Sequence[int]) -> float:
    """Max over interior x of ``|G(x) - 1_y(x) - mean of G over neighbours|``."""
    reg = ball_region(d, float(r))
    g = _green_cached(d, float(r), tuple(int(v) for v in y))
    b = np.zeros(len(reg))
    b[reg.interior_index(y)] = 1.0
    return reg.operator.residual(g, b)


@dataclass(frozen=True)
class GreenEstimate:
    d: int
    r: float
    at: Site
    value: float
    form: str  # asymptotic-d2 | asymptotic-dge3 | exact-solve
    offset: Optional[float] = None  # measured O(1) term for the d = 2 origin form


def green_asymptotic(d: int, r: float, x: Sequence[int],
                     calibration: Optional["Calibration"] = None) -> GreenEstimate:
    """Leading-order ``G_r(0, x)``.

    d = 2: ``(2/pi) log r`` at the origin (measured offset reported apart) and
    ``(2/pi)(log r - log|x|)`` elsewhere. d >= 3: ``a_d (|x|^(2-d) - r^(2-d))``
    with the calibrated ``a_d``; the origin needs the calibrated ``G(0)``.
    """
    x = tuple(int(v) for v in x)
    nx = _norm(x)
    if nx > r:
        raise ValueError("need |x| <= r")
    cal = calibration if calibration is not None else load_calibration()
    if d == 2:
        if nx == 0:
            return GreenEstimate(d, r, x, 2 / math.pi * math.log(r), "asymptotic-d2",
                                 cal.get("green_offset_2d"))
        return GreenEstimate(d, r, x, 2 / math.pi * (math.log(r) - math.log(nx)), "asymptotic-d2")
    if d < 2:
        raise ValueError("d must be >= 2")
    a = cal.get(f"a_{d}")
    if nx == 0:
        g0 = cal.get(f"g0_{d}")
        if g0 is None or a is None:
            raise CalibrationMissing(f"origin value in d={d} needs calibrated g0_{d} and a_{d}")
        return GreenEstimate(d, r, x, g0 - a * r ** (2 - d), "asymptotic-dge3")
    if a is None:
        raise CalibrationMissing(f"a_{d} is not calibrated")
    return GreenEstimate(d, r, x, a * (nx ** (2 - d) - r ** (2 - d)), "asymptotic-dge3")


def fit_a_d(d: int, r: float = 60.0, rmin: float = 10.0, rmax: float = 25.0) -> Tuple[float, float]:
    """Least-squares ``a_d`` from ``G_r(0, x) ~ a_d (|x|^(2-d) - r^(2-d))`` on ``rmin <= |x| <= rmax``.

    Returns (a_d, standard error of the fit).
    """
    if d < 3:
        raise ValueError("a_d is fitted for d >= 3")
    reg = ball_region(d, float(r))
    g = _green_cached(d, float(r), (0,) * d)
    nn = np.sqrt((reg.interior.astype(float) ** 2).sum(axis=1))
    m = (nn >= rmin) & (nn <= rmax)
    f = nn[m] ** (2 - d) - r ** (2 - d)
    a = float((f * g[m]).sum() / (f * f).sum())
    resid = g[m] - a * f
    se = float(math.sqrt((resid ** 2).sum() / max(1, m.sum() - 1) / (f * f).sum()))
    return a, se


# -- harmonic fields ---------------------------------------------------------------------

@dataclass
class HarmonicField:
    """Values on a region's interior and boundary."""

    region: Region
    interior_values: np.ndarray
    boundary_values: np.ndarray

    def __getitem__(self, x: Sequence[int]) -> float:
        i = self.region.interior_index(x)
        if i >= 0:
            return float(self.interior_values[i])
        k = self.region.boundary_index(x)
        if k >= 0:
            return float(self.boundary_values[k])
        raise KeyError(f"{tuple(x)} is outside the region")

    def max_residual(self) -> float:
        """Max over interior x of ``|h(x) - mean of h over neighbours|``."""
        reg = self.region
        return reg.operator.residual(self.interior_values, reg.boundary_rhs(self.boundary_values))

    def grid(self) -> np.ndarray:
        """Values on the region's box, NaN off the region."""
        out = np.full(self.region.shape, np.nan)
        out[tuple((self.region.interior - self.region.lo).T)] = self.interior_values
        out[tuple((self.region.boundary - self.region.lo).T)] = self.boundary_values
        return out


def solve_dirichlet(region: Region, boundary_values: np.ndarray) -> HarmonicField:
    bv = np.asarray(boundary_values, dtype=float)
    rhs = region.boundary_rhs(bv)
    h = region.operator.solve(rhs)
    res = region.operator.residual(h, rhs)
    if res > RESIDUAL_TOL:
        raise ArithmeticError(f"harmonic solve residual {res:.3e} above {RESIDUAL_TOL}")
    return HarmonicField(region, h, bv)


def hitting_field(region: Region, target: Iterable[Sequence[int]]) -> HarmonicField:
    """``H(x) = P_x(walk first leaves the interior at a site of target)``."""
    data = np.zeros(len(region.boundary))
    for y in target:
        k = region.boundary_index(y)
        if k < 0:
            raise ValueError(f"target site {tuple(y)} is not on the region boundary")
        data[k] = 1.0
    return solve_dirichlet(region, data)


def gradient_sum(fld: HarmonicField, rho: Optional[float] = None,
                 center: Optional[Sequence[int]] = None) -> float:
    """Sum over region sites u with ``|u - center| < rho`` and region neighbours v of ``|H(u) - H(v)|``."""
    reg = fld.region
    g = fld.grid()
    d = reg.d
    ax = [np.arange(s) + l for s, l in zip(reg.shape, reg.lo)]
    coords = np.meshgrid(*ax, indexing="ij")
    c = np.zeros(d) if center is None else np.asarray(center, dtype=float)
    sel = ~np.isnan(g)
    if rho is not None:
        dist2 = sum((coords[a] - c[a]) ** 2 for a in range(d))
        sel &= dist2 < rho * rho
    total = 0.0
    for a in range(d):
        for s in (1, -1):
            nb = np.roll(g, -s, axis=a)
            # np.roll wraps around; drop the wrapped face
            valid = sel & ~np.isnan(nb)
            edge = [slice(None)] * d
            edge[a] = -1 if s == 1 else 0
            valid[tuple(edge)] = False
            total += float(np.abs(g[valid] - nb[valid]).sum())
    return total


def green_gradient_sum(d: int, r: float, x: Sequence[int], rho: float) -> float:
    """``sum_{y in B_r, |x-y| <= rho} sum_{z ~ y} |G_r(x,y) - G_r(x,z)|``, with G = 0 off B_r."""
    reg = ball_region(d, float(r))
    g = _green_cached(d, float(r), tuple(int(v) for v in x))  # G(x, .) = G(., x) by symmetry
    grid = np.zeros(tuple(s + 2 for s in reg.shape))
    cells = reg.interior - reg.lo + 1
    grid[tuple(cells.T)] = g
    xc = np.asarray(x, dtype=float)
    m = ((reg.interior - xc) ** 2).sum(axis=1) <= rho * rho
    sel = cells[m]
    total = 0.0
    base = g[m]
    for a in range(d):
        for s in (1, -1):
            nb = sel.copy()
            nb[:, a] += s
            total += float(np.abs(base - grid[tuple(nb.T)]).sum())
    return total


# -- harmonic measure on finite directed graphs ----------------------------------------

def graph_hitting(out_edges: Sequence[Sequence[int]], sinks: Iterable[int],
                  target: Iterable[int]) -> np.ndarray:
    """``h(v) = P_v(uniform out-edge walk first hits the sink set inside target)``.

    Parallel edges count with multiplicity. Raises ValueError when some
    non-sink vertex cannot reach a sink.
    """
    nv = len(out_edges)
    sinks = set(sinks)
    target = set(target)
    h = np.zeros(nv)
    for v in target:
        h[v] = 1.0
    free = [v for v in range(nv) if v not in sinks]
    if not free:
        return h
    pos = {v: i for i, v in enumerate(free)}
    rows, cols, vals = [], [], []
    b = np.zeros(len(free))
    for v in free:
        outs = out_edges[v]
        if not outs:
            raise ValueError(f"vertex {v} has no out-edges")
        w = 1.0 / len(outs)
        for t in outs:
            if t in pos:
                rows.append(pos[v])
                cols.append(pos[t])
                vals.append(w)
            else:
                b[pos[v]] += w * h[t]
    P = sp.csr_matrix((vals, (rows, cols)), shape=(len(free), len(free)))
    op = _Operator(sp.identity(len(free), format="csr") - P, symmetric=False)
    if len(free) <= 64:
        dense = op.A.toarray()
        if np.linalg.matrix_rank(dense) < len(free):
            raise ValueError("some non-sink vertex cannot reach the sink set")
    x = op.solve(b)
    if not np.all(np.isfinite(x)):
        raise ValueError("some non-sink vertex cannot reach the sink set")
    res = op.residual(x, b)
    if res > RESIDUAL_TOL:
        raise ArithmeticError(f"graph harmonic residual {res:.3e} above {RESIDUAL_TOL}")
    h[free] = x
    return h


# -- Monte-Carlo escape probability ----------------------------------------------------

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


@njit(cache=True, inline="always")
def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def _draws(seed, stream, count, out):
    """Raw counter-based draws: ``out[i] = mix(key(seed, stream) + (i+1) * golden)``."""
    key = _mix(np.uint64(seed) * _GOLDEN + np.uint64(stream))
    for i in range(count):
        out[i] = _mix(key + np.uint64(i + 1) * _GOLDEN)


@njit(cache=True)
def _trial(d, R, R0, seed, t, buf):
    """One walk from 0: True iff it leaves B_R before returning to 0."""
    key = _mix(np.uint64(seed) * _GOLDEN + np.uint64(t))
    ctr = np.uint64(0)
    x = np.zeros(d, np.int64)
    s2 = 0
    n2 = np.uint64(2 * d)
    R2 = R * R
    rin = 0.5 * R0
    steps = 0
    while True:
        ctr += np.uint64(1)
        z = _mix(key + ctr * _GOLDEN)
        for half in range(2):
            w = (z >> np.uint64(32)) if half == 0 else (z & np.uint64(0xFFFFFFFF))
            k = np.int64((w * n2) >> np.uint64(32))
            a = k >> 1
            if k & 1:
                s2 += 1 - 2 * x[a]
                x[a] -= 1
            else:
                s2 += 1 + 2 * x[a]
                x[a] += 1
            steps += 1
            if s2 == 0:
                return False
            if s2 >= R2:
                return True
            if R0 < R and s2 >= R0 * R0:
                # radial jump: leave B_R, or come back to the sphere of radius R0/2
                rho = math.sqrt(float(s2))
                p = (rho ** (2 - d) - float(R) ** (2 - d)) / (rin ** (2 - d) - float(R) ** (2 - d))
                ctr += np.uint64(1)
                u = float(_mix(key + ctr * _GOLDEN) >> np.uint64(11)) * (1.0 / 9007199254740992.0)
                if u >= p:
                    return True
                # uniform direction from Gaussians (Box-Muller)
                nrm = 0.0
                for a2 in range(d):
                    ctr += np.uint64(1)
                    u1 = (float(_mix(key + ctr * _GOLDEN) >> np.uint64(11)) + 0.5) * (1.0 / 9007199254740992.0)
                    ctr += np.uint64(1)
                    u2 = float(_mix(key + ctr * _GOLDEN) >> np.uint64(11)) * (1.0 / 9007199254740992.0)
                    buf[a2] = math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)
                    nrm += buf[a2] * buf[a2]
                nrm = math.sqrt(nrm)
                s2 = 0
                for a2 in range(d):
                    x[a2] = np.int64(round(rin * buf[a2] / nrm))
                    s2 += x[a2] * x[a2]
                break  # fresh draw for the next step


@njit(cache=True)
def _trials(d, R, R0, seed, start, stop):
    buf = np.zeros(d)
    esc = 0
    for t in range(start, stop):
        if _trial(d, R, R0, seed, t, buf):
            esc += 1
    return esc


EXACT_RADIUS = 32


@dataclass(frozen=True)
class AlphaEstimate:
    d: int
    trials: int
    radius: int
    seed: int
    escapes: int
    exact_radius: int

    @property
    def estimate(self) -> float:
        return self.escapes / self.trials

    @property
    def std_error(self) -> float:
        p = self.estimate
        return math.sqrt(p * (1 - p) / self.trials)

    def as_dict(self) -> Dict[str, float]:
        return {"d": self.d, "trials": self.trials, "radius": self.radius, "seed": self.seed,
                "escapes": self.escapes, "estimate": self.estimate, "std_error": self.std_error,
                "exact_radius": self.exact_radius}


def mc_alpha(d: int, trials: int, confinement_radius: int, seed: int = 0, *,
             exact_radius: Optional[int] = EXACT_RADIUS, shards: int = 1) -> AlphaEstimate:
    """Fraction of simple random walks from 0 that leave ``B_R`` before returning to 0.

    Inside ``|x| < exact_radius`` the lattice walk is simulated step by
    step; beyond it the walk is moved radially using the continuum hitting
    probability ``(rho^(2-d) - R^(2-d)) / (rin^(2-d) - R^(2-d))`` to either
    leave ``B_R`` or land on the sphere of radius ``exact_radius/2``.
    ``exact_radius=None`` disables the shortcut. Trial t always uses the
    stream keyed by (seed, t), so the result does not depend on ``shards``.
    """
    if d < 3:
        raise ValueError("simple random walk is recurrent for d < 3; alpha_d = 0")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if confinement_radius < 10:
        raise ValueError("confinement_radius must be >= 10")
    R = int(confinement_radius)
    if exact_radius is not None and exact_radius < 8:
        raise ValueError("exact_radius must be >= 8")
    R0 = R if exact_radius is None else min(R, int(exact_radius))
    bounds = np.linspace(0, trials, max(1, shards) + 1).astype(np.int64)
    esc = 0
    for a, b in zip(bounds[:-1], bounds[1:]):
        esc += int(_trials(d, R, R0, int(seed), int(a), int(b)))
    return AlphaEstimate(d, int(trials), R, int(seed), esc, R0)


def direction_draws(seed: int, count: int, d: int, stream: int = 0) -> np.ndarray:
    """2d-way direction choices from the generator, for uniformity checks."""
    raw = np.zeros(count, dtype=np.uint64)
    _draws(seed, stream, count, raw)
    return ((raw >> np.uint64(32)) * np.uint64(2 * d)) >> np.uint64(32)


# -- calibration file ------------------------------------------------------------------

CALIBRATION_VERSION = 1
_DEFAULT_CAL = os.path.join(os.path.dirname(__file__), "calibration.txt")


@dataclass
class Calibration:
    """Measured constants with provenance comments; ``key = value  # note`` lines."""

    values: Dict[str, float] = field(default_factory=dict)
    notes: Dict[str, str] = field(default_factory=dict)

    def get(self, key: str, default: Optional[float] = None) -> Optional[float]:
        return self.values.get(key, default)

    def set(self, key: str, value: float, note: str = "") -> None:
        self.values[key] = float(value)
        self.notes[key] = note

    def dumps(self) -> str:
        lines = [f"# rotorwalk calibration v{CALIBRATION_VERSION}"]
        for k in sorted(self.values):
            note = self.notes.get(k, "")
            lines.append(f"{k} = {self.values[k]!r}" + (f"  # {note}" if note else ""))
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "Calibration":
        cal = cls()
        lines = text.splitlines()
        if not lines or not lines[0].startswith("# rotorwalk calibration v"):
            raise ValueError("not a calibration file")
        version = int(lines[0].rsplit("v", 1)[1])
        if version > CALIBRATION_VERSION:
            raise ValueError(f"calibration version {version} is newer than supported")
        for ln in lines[1:]:
            body, _, note = ln.partition("#")
            if not body.strip():
                continue
            k, _, v = body.partition("=")
            cal.set(k.strip(), float(v), note.strip())
        return cal


def load_calibration(path: Optional[str] = None) -> Calibration:
    path = path or os.environ.get("ROTORWALK_CALIBRATION") or _DEFAULT_CAL
    if not os.path.exists(path):
        return Calibration()
    with open(path) as fh:
        return Calibration.loads(fh.read())


def hitting_constant(d: int, r: float, y: Sequence[int]) -> float:
    """``max_x H(x) |x - y|^(d-1)`` over the interior of ``B_r`` for target {y}."""
    reg = ball_region(d, float(r))
    h = hitting_field(reg, [y])
    dist = np.sqrt(((reg.interior - np.asarray(y)) ** 2).sum(axis=1))
    return float((h.interior_values * dist ** (d - 1)).max())


def jprime_profile(rho: int, d: int = 2) -> float:
    """gradient_sum of the hitting field of ``y = rho e_1`` over all of ``B_rho``."""
    y = (rho,) + (0,) * (d - 1)
    return gradient_sum(hitting_field(Region.ball(d, float(rho)), [y]))


def calibrate(*, alpha_trials: int = 10**6, alpha_radius: int = 10**4, seed: int = 7,
              quick: bool = False) -> Calibration:
    """Measure every constant the acceptance runs consume."""
    cal = Calibration()
    offs = []
    for r in (20.0, 40.0, 80.0):
        off = exact_green(2, r, (0, 0), (0, 0)) - 2 / math.pi * math.log(r)
        offs.append(off)
        cal.set(f"green_offset_2d_r{int(r)}", off, f"G_r(0,0) - (2/pi) log r, exact solve, r={int(r)}")
    cal.set("green_offset_2d", offs[-1], "d=2 origin offset at r=80")
    a3, se = fit_a_d(3, 30.0 if quick else 60.0)
    cal.set("a_3", a3, f"fit of G_r(0,x) over 10<=|x|<=25, r={30 if quick else 60}")
    cal.set("a_3_se", se, "standard error of the a_3 fit")
    r3 = 30.0 if quick else 60.0
    cal.set("g0_3", exact_green(3, r3, (0, 0, 0), (0, 0, 0)) + a3 * r3 ** -1.0,
            f"G_r(0,0) + a_3/r at r={int(r3)}")
    cal.set("J_2", hitting_constant(2, 20.0, (20, 0)), "max H(x)|x-y| on B_20, y=(20,0)")
    rhos = (10, 20, 40, 80)
    gs = [jprime_profile(rho) for rho in rhos]
    slope, icpt = np.polyfit(np.log(rhos), gs, 1)
    cal.set("Jprime_2", float(slope), "slope of gradient_sum against log rho, H on B_rho, y=(rho,0), rho in {10,20,40,80}")
    cal.set("Jprime_2_intercept", float(icpt), "intercept of the same fit")
    est = mc_alpha(3, alpha_trials if not quick else 10**4, alpha_radius, seed)
    cal.set("alpha_3", est.estimate, f"mc_alpha trials={est.trials} radius={est.radius} seed={seed}")
    cal.set("alpha_3_se", est.std_error, "binomial standard error")
    est2 = mc_alpha(3, est.trials, 2 * alpha_radius, seed)
    cal.set("alpha_3_2R", est2.estimate, f"same at radius {2 * alpha_radius}")
    return cal
