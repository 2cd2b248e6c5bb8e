"""Directions, cyclic rotor orders, initial rotor rules and the lattice state.

Rotor convention: a particle standing at ``x`` leaves along the *current*
rotor ``rho(x)`` and only then is the rotor advanced to ``m(rho(x))``
(move-then-turn). Every trajectory in the package depends on this order.

Storage is dense numpy blocks that grow on demand, but the public surface is
sparse: a site is *materialized* once it has been exited, and a site that was
never exited reports its initial rotor and odometer 0. Per-site state is
fully determined by the odometer, since the rotor is
``m^(odometer)(initial rotor)`` and the exits towards each direction are the
counts of that direction among the first ``odometer`` rotor positions.

Escaping particles leave an infinite straight ray of sites exited once. Rays
are kept per column (the line through ``(x_1..x_{d-1})`` parallel to
``e_d``) as a start height, so ray sites contribute one implicit exit each.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterator, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from rotorwalk import _kernels as K

Site = Tuple[int, ...]


MAX_CELLS = 1 << 30  # dense-block cap (4 GiB of odometers)


class MalformedOrder(ValueError):
    """A proposed cyclic order is not a permutation of the 2d directions."""


class BlockTooLarge(MemoryError):
    """Covering the requested site would need a dense block above MAX_CELLS."""


class Direction(NamedTuple):
    """A cardinal direction ``sign * e_(axis+1)``; axes are 0-based."""

    axis: int
    sign: int

    @property
    def index(self) -> int:
        return 2 * self.axis + (0 if self.sign > 0 else 1)

    @classmethod
    def from_index(cls, k: int) -> "Direction":
        return cls(k >> 1, 1 - 2 * (k & 1))

    @classmethod
    def parse(cls, text: str) -> "Direction":
        """Parse ``e2``, ``+e2`` or ``-e1`` (1-based axis labels)."""
        t = text.strip()
        sign = 1
        if t[0] in "+-":
            sign = -1 if t[0] == "-" else 1
            t = t[1:]
        if not t.startswith("e") or not t[1:].isdigit() or int(t[1:]) < 1:
            raise ValueError(f"bad direction label: {text!r}")
        return cls(int(t[1:]) - 1, sign)

    def __neg__(self) -> "Direction":
        return Direction(self.axis, -self.sign)

    def vector(self, d: int) -> Site:
        v = [0] * d
        v[self.axis] = self.sign
        return tuple(v)

    def __str__(self) -> str:
        return f"{'+' if self.sign > 0 else '-'}e{self.axis + 1}"


def up(d: int) -> Direction:
    return Direction(d - 1, 1)


def down(d: int) -> Direction:
    return Direction(d - 1, -1)


def all_directions(d: int) -> List[Direction]:
    return [Direction.from_index(k) for k in range(2 * d)]


@dataclass(frozen=True)
class CyclicOrder:
    """A cyclic permutation ``m`` of the 2d cardinal directions.

    ``sequence[k+1] = m(sequence[k])`` and the last entry wraps to the first.
    """

    sequence: Tuple[Direction, ...]

    def __post_init__(self) -> None:
        seq = tuple(Direction(int(e[0]), int(e[1])) for e in self.sequence)
        object.__setattr__(self, "sequence", seq)
        if len(seq) < 4 or len(seq) % 2:
            raise MalformedOrder(f"order has {len(seq)} entries; need 2d with d >= 2")
        d = len(seq) // 2
        if sorted(e.index for e in seq if 0 <= e.axis < d and e.sign in (1, -1)) != list(range(2 * d)):
            raise MalformedOrder(f"order is not a permutation of the {2 * d} directions: "
                                 + " ".join(map(str, seq)))

    @classmethod
    def parse(cls, text: str) -> "CyclicOrder":
        """``"e1,e2,-e1,-e2"`` (commas, spaces or arrows as separators)."""
        parts = [p for p in text.replace("->", ",").replace("→", ",").replace(" ", ",").split(",") if p]
        return cls(tuple(Direction.parse(p) for p in parts))

    @property
    def d(self) -> int:
        return len(self.sequence) // 2

    def __str__(self) -> str:
        return ",".join(map(str, self.sequence))

    @property
    def cycle(self) -> np.ndarray:
        """Direction indices in cycle order."""
        return np.array([e.index for e in self.sequence], dtype=np.int64)

    @property
    def position(self) -> np.ndarray:
        """Inverse of :attr:`cycle`: position of each direction index."""
        pos = np.empty(2 * self.d, dtype=np.int64)
        pos[self.cycle] = np.arange(2 * self.d)
        return pos

    def next(self, e: Direction, k: int = 1) -> Direction:
        """``m^(k)(e)``."""
        i = self.sequence.index(e)
        return self.sequence[(i + k) % len(self.sequence)]

    def eta(self, e: Direction) -> int:
        """The k in ``[0, 2d)`` with ``m^(k)(e_d) = e``."""
        n = len(self.sequence)
        return (self.sequence.index(e) - self.sequence.index(up(self.d))) % n

    def permute_axes(self, perm: Sequence[int]) -> "CyclicOrder":
        """Relabel axis ``a`` as ``perm[a]``."""
        return CyclicOrder(tuple(Direction(perm[e.axis], e.sign) for e in self.sequence))


def eta(order: CyclicOrder, e: Direction) -> int:
    return order.eta(e)


@dataclass(frozen=True)
class OrderVerdict:
    ok: bool
    witness: Optional[int]  # 0-based axis i < d-1 separating e_d from -e_d
    witnesses: Tuple[int, ...] = ()


def validate_order(order: CyclicOrder, d: Optional[int] = None) -> OrderVerdict:
    """Check that some pair ``+-e_i`` (i < d) separates ``e_d`` and ``-e_d`` in the cycle.

    The test is the sign of ``(eta(e_i) - eta(-e_d)) * (eta(-e_i) - eta(-e_d))``.
    The preferred witness is axis ``d-2`` (the last transverse axis) when it
    qualifies.
    """
    if d is not None and order.d != d:
        raise MalformedOrder(f"order is for d={order.d}, expected d={d}")
    d = order.d
    ref = order.eta(down(d))
    wit = tuple(i for i in range(d - 1)
                if (order.eta(Direction(i, 1)) - ref) * (order.eta(Direction(i, -1)) - ref) < 0)
    if not wit:
        return OrderVerdict(False, None, ())
    return OrderVerdict(True, d - 2 if d - 2 in wit else wit[0], wit)


def normalize_order(order: CyclicOrder) -> Tuple[CyclicOrder, Tuple[int, ...]]:
    """Swap axes so that the separating axis is ``d-2``; returns (order, permutation)."""
    d = order.d
    v = validate_order(order)
    perm = list(range(d))
    if v.ok and v.witness != d - 2:
        perm[v.witness], perm[d - 2] = d - 2, v.witness
    return order.permute_axes(perm), tuple(perm)


def ccw(d: int) -> CyclicOrder:
    """Counterclockwise rotation in the ``(e_{d-1}, e_d)`` plane, other axes interleaved.

    Cycle: ``e_{d-1}, e_d, e_1, -e_1, ..., e_{d-2}, -e_{d-2}, -e_{d-1}, -e_d``.
    For d = 2 this is e1 -> e2 -> -e1 -> -e2.
    """
    if d < 2:
        raise ValueError("d must be >= 2")
    seq = [Direction(d - 2, 1), Direction(d - 1, 1)]
    for a in range(d - 2):
        seq += [Direction(a, 1), Direction(a, -1)]
    seq += [Direction(d - 2, -1), Direction(d - 1, -1)]
    return CyclicOrder(tuple(seq))


def cw(d: int) -> CyclicOrder:
    """Mirror image of :func:`ccw` under ``x_{d-1} -> -x_{d-1}``."""
    return CyclicOrder(tuple(Direction(e.axis, -e.sign) if e.axis == d - 2 else e
                             for e in ccw(d).sequence))


ORDER_PRESETS = {"ccw": ccw, "cw": cw}


def order_from_spec(spec: str, d: int) -> CyclicOrder:
    """A preset name (``ccw``/``cw``) or an explicit cycle such as ``e1,e2,-e1,-e2``."""
    if spec in ORDER_PRESETS:
        return ORDER_PRESETS[spec](d)
    order = CyclicOrder.parse(spec)
    if order.d != d:
        raise MalformedOrder(f"order {spec!r} has d={order.d}, expected {d}")
    return order


@dataclass(frozen=True)
class InitialRule:
    """Initial rotor configuration.

    ``rho0``: ``+e_d`` on ``x_d >= 0`` and ``-e_d`` below. ``uniform-up``:
    ``+e_d`` everywhere. ``custom``: finitely many explicit overrides on top of
    one of the two (``default``).
    """

    kind: str = "rho0"
    overrides: Mapping[Site, Direction] = field(default_factory=dict)
    default: str = "rho0"

    def __post_init__(self) -> None:
        if self.kind not in ("rho0", "uniform-up", "custom"):
            raise ValueError(f"unknown rule kind {self.kind!r}")
        if self.default not in ("rho0", "uniform-up"):
            raise ValueError(f"unknown default rule {self.default!r}")
        if self.kind != "custom" and self.overrides:
            raise ValueError("overrides need kind='custom'")
        ov = {tuple(int(c) for c in k): Direction(int(v[0]), int(v[1])) for k, v in self.overrides.items()}
        if self.kind != "custom":
            object.__setattr__(self, "default", self.kind)
        # an override equal to the default rotor changes nothing; dropping it keeps
        # launch-site detection exact along columns through such sites
        ov = {x: e for x, e in ov.items() if e != self._default_at(x)}
        object.__setattr__(self, "overrides", ov)

    @classmethod
    def rho0(cls) -> "InitialRule":
        return cls("rho0")

    @classmethod
    def uniform_up(cls) -> "InitialRule":
        return cls("uniform-up")

    @classmethod
    def custom(cls, overrides: Mapping[Site, Direction], default: str = "rho0") -> "InitialRule":
        return cls("custom", dict(overrides), default)

    @property
    def code(self) -> int:
        return K.RULE_RHO0 if self.default == "rho0" else K.RULE_UP

    def _default_at(self, x: Site) -> Direction:
        d = len(x)
        if self.default == "uniform-up" or x[-1] >= 0:
            return up(d)
        return down(d)

    def __call__(self, x: Sequence[int]) -> Direction:
        x = tuple(x)
        if x in self.overrides:
            return self.overrides[x]
        return self._default_at(x)

    def describe(self) -> str:
        if self.kind != "custom":
            return self.kind
        return f"custom(default={self.default}, overrides={len(self.overrides)})"


@dataclass(frozen=True)
class SiteState:
    rotor: Direction
    odometer: int
    exits: Tuple[int, ...]  # indexed by Direction.index: +e1, -e1, +e2, ...


def _box_for(points: Sequence[Site], d: int, margin: int) -> Tuple[np.ndarray, np.ndarray]:
    pts = np.array(list(points) + [(0,) * d], dtype=np.int64).reshape(-1, d)
    lo = pts.min(axis=0) - margin
    hi = pts.max(axis=0) + margin
    return lo, hi - lo + 1


class LatticeState:
    """Mutable rotor configuration, odometers and column index on Z^d.

    Single-writer: mutate from one thread only. Distinct states are
    independent and may run in parallel.

    Sites are in the normalised frame: when the order's separating axis is
    not ``d-2`` two axes are swapped at construction (``axis_permutation``,
    user axis ``a`` becomes axis ``perm[a]``) and every site argument and
    result refers to the swapped axes.
    """

    def __init__(self, d: int, order: Optional[CyclicOrder] = None, rule: Optional[InitialRule] = None,
                 *, extent: int = 4, normalize: bool = True):
        if d < 2:
            raise ValueError("d must be >= 2")
        order = ccw(d) if order is None else order
        if order.d != d:
            raise MalformedOrder(f"order is for d={order.d}, state has d={d}")
        rule = InitialRule.rho0() if rule is None else rule
        self.axis_permutation: Tuple[int, ...] = tuple(range(d))
        if normalize:
            order, perm = normalize_order(order)
            if perm != self.axis_permutation:
                self.axis_permutation = perm
                if rule.overrides:
                    rule = InitialRule.custom(
                        {tuple(k[perm.index(a)] for a in range(d)): Direction(perm[v.axis], v.sign)
                         for k, v in rule.overrides.items()}, rule.default)
        self.d = d
        self.order = order
        self.rule = rule
        self.cyc = order.cycle
        self.cpos = order.position
        lo, shape = _box_for(list(rule.overrides), d, extent)
        self._alloc(lo, shape)
        # [particles, escapes, up, down, abs_origin, abs_other, total_steps,
        #  h_plus, h_minus, breadth, in_flight, cur_steps, log_count]
        self.stats = np.zeros(K.NSTATS, dtype=np.int64)
        self.pos = np.zeros(d, dtype=np.int64)
        self.occupied_count = 0

    # -- storage -----------------------------------------------------------
    def _alloc(self, lo: np.ndarray, shape: np.ndarray) -> None:
        d = self.d
        self.lo = np.asarray(lo, dtype=np.int64)
        self.shape = np.asarray(shape, dtype=np.int64)
        self.strides = np.ones(d, dtype=np.int64)
        for a in range(d - 2, -1, -1):
            self.strides[a] = self.strides[a + 1] * self.shape[a + 1]
        size = int(np.prod(self.shape))
        ncol = size // int(self.shape[-1])
        self.odo = np.zeros(size, dtype=np.int32)  # per-site counts stay far below 2^31 at desk scale
        self.col_hi = np.full(ncol, K.NONE_HI, dtype=np.int64)
        self.col_lo = np.full(ncol, K.NONE_LO, dtype=np.int64)
        self.up_ray = np.full(ncol, K.NO_UP, dtype=np.int64)
        self.down_ray = np.full(ncol, K.NO_DOWN, dtype=np.int64)
        self.col_ohi = np.full(ncol, K.NONE_HI, dtype=np.int64)
        self.col_olo = np.full(ncol, K.NONE_LO, dtype=np.int64)
        if self.rule.overrides:
            self.ovr = np.full(size, -1, dtype=np.int8)
            for x, e in self.rule.overrides.items():
                i = self._flat(x)
                self.ovr[i] = e.index
                c = i // self.shape[-1]
                self.col_ohi[c] = max(self.col_ohi[c], x[-1])
                self.col_olo[c] = min(self.col_olo[c], x[-1])
        else:
            self.ovr = np.full(1, -1, dtype=np.int8)
        self.occ = np.zeros(1, dtype=np.uint8)
        self.absorb = np.zeros(1, dtype=np.uint8)
        self.absorbing: FrozenSet[Site] = frozenset()

    def _grids(self):
        """Views of the flat arrays as d- and (d-1)-dimensional grids."""
        sh = tuple(int(s) for s in self.shape)
        return sh, sh[:-1]

    def contains(self, x: Sequence[int]) -> bool:
        return all(self.lo[a] <= x[a] < self.lo[a] + self.shape[a] for a in range(self.d))

    def _flat(self, x: Sequence[int]) -> int:
        return int(sum((int(x[a]) - int(self.lo[a])) * int(self.strides[a]) for a in range(self.d)))

    def _col(self, x: Sequence[int]) -> int:
        """Column index of x, or -1 when the column lies outside the block."""
        d = self.d
        if not all(self.lo[a] <= x[a] < self.lo[a] + self.shape[a] for a in range(d - 1)):
            return -1
        return int(sum((int(x[a]) - int(self.lo[a])) * int(self.strides[a]) for a in range(d - 1))
                   // int(self.shape[-1]))

    def ensure(self, x: Sequence[int], margin: int = 2) -> None:
        """Grow the block (at least doubling along each growing axis) to contain x."""
        if self.contains(x) and all(self.lo[a] + margin <= x[a] < self.lo[a] + self.shape[a] - margin
                                    for a in range(self.d)):
            return
        lo = self.lo.copy()
        hi = self.lo + self.shape
        for a in range(self.d):
            size = int(self.shape[a])
            if x[a] - margin < lo[a]:
                lo[a] = min(x[a] - margin, lo[a] - size // 2 - 1)
            if x[a] + margin >= hi[a]:
                hi[a] = max(x[a] + margin + 1, hi[a] + size // 2 + 1)
        cells = int(np.prod((hi - lo).astype(float)))
        if cells > MAX_CELLS:
            raise BlockTooLarge(f"covering {tuple(int(v) for v in x)} needs {cells:.3g} cells "
                                f"(cap {MAX_CELLS:.3g}); the state stores a dense box around its sites")
        self._regrid(lo, hi - lo)

    def _regrid(self, lo: np.ndarray, shape: np.ndarray) -> None:
        old = {k: getattr(self, k) for k in ("odo", "col_hi", "col_lo", "up_ray", "down_ray",
                                              "col_ohi", "col_olo", "ovr", "occ", "absorb")}
        old_lo, (old_sh, old_csh) = self.lo, self._grids()
        self._alloc(lo, shape)
        new_sh, new_csh = self._grids()
        off = tuple(slice(int(old_lo[a] - self.lo[a]), int(old_lo[a] - self.lo[a]) + old_sh[a])
                    for a in range(self.d))
        self.odo.reshape(new_sh)[off] = old["odo"].reshape(old_sh)
        for k in ("col_hi", "col_lo", "up_ray", "down_ray", "col_ohi", "col_olo"):
            getattr(self, k).reshape(new_csh)[off[:-1]] = old[k].reshape(old_csh)
        for k in ("ovr", "occ", "absorb"):
            if old[k].size > 1:
                fill = -1 if k == "ovr" else 0
                arr = np.full(self.odo.size, fill, dtype=old[k].dtype)
                arr.reshape(new_sh)[off] = old[k].reshape(old_sh)
                setattr(self, k, arr)

    def enable_occupancy(self) -> None:
        if self.occ.size == 1:
            self.occ = np.zeros(self.odo.size, dtype=np.uint8)

    def set_absorbing(self, sites: Sequence[Site]) -> None:
        self.absorbing = frozenset(tuple(int(v) for v in x) for x in sites)
        for x in sites:
            self.ensure(x)
        self.absorb = np.zeros(self.odo.size, dtype=np.uint8)
        for x in sites:
            self.absorb[self._flat(x)] = 1

    # -- per-site queries --------------------------------------------------
    def initial(self, x: Sequence[int]) -> Direction:
        return self.rule(x)

    def odometer(self, x: Sequence[int]) -> int:
        x = tuple(int(v) for v in x)
        c = self._col(x)
        stored = int(self.odo[self._flat(x)]) if self.contains(x) else 0
        if c < 0:
            return stored
        return stored + int(self.up_ray[c] <= x[-1]) + int(self.down_ray[c] >= x[-1])

    def rotor_at(self, x: Sequence[int]) -> Direction:
        """Current rotor at x (initial rotor if x was never exited)."""
        u = self.odometer(x)
        p = (int(self.cpos[self.initial(x).index]) + u) % (2 * self.d)
        return Direction.from_index(int(self.cyc[p]))

    def exits(self, x: Sequence[int]) -> Tuple[int, ...]:
        u = self.odometer(x)
        n = 2 * self.d
        p0 = int(self.cpos[self.initial(x).index])
        out = [0] * n
        for k in range(n):
            out[int(self.cyc[k])] = (u - (k - p0) % n + n - 1) // n
        return tuple(out)

    def site(self, x: Sequence[int]) -> Optional[SiteState]:
        u = self.odometer(x)
        if u == 0:
            return None
        return SiteState(self.rotor_at(x), u, self.exits(x))

    def exit_once(self, x: Sequence[int]) -> Direction:
        """Send one particle out of x along the current rotor, then turn the rotor."""
        x = tuple(int(v) for v in x)
        self.ensure(x)
        k = K.exit_site(self.d, self.cyc, self.cpos, self.lo, self.shape, self.strides, self.odo,
                        self.ovr, self.col_hi, self.col_lo, self.up_ray, self.down_ray,
                        self.rule.code, np.array(x, dtype=np.int64), self.stats)
        return Direction.from_index(int(k))

    def escape_sign(self, x: Sequence[int]) -> int:
        """+1 / -1 when a particle at the never-exited site x runs straight to infinity, else 0."""
        x = np.array(x, dtype=np.int64)
        c = self._col(tuple(x))
        i = self._flat(tuple(x)) if c >= 0 else -1
        return int(K.escape_sign(i, int(x[-1]), c, self.initial(tuple(x)).index, self.d, self.ovr, self.col_hi, self.col_lo, self.up_ray, self.down_ray,
                                 self.col_ohi, self.col_olo, self.rule.code))

    # -- column index --------------------------------------------------------
    def column_range(self, col: Sequence[int]) -> Optional[Tuple[float, float]]:
        """(min, max) exited height in a column; rays count as +-inf. None if untouched."""
        c = self._col(tuple(col) + (0,))
        if c < 0:
            return None
        lo, hi = int(self.col_lo[c]), int(self.col_hi[c])
        has_up, has_down = self.up_ray[c] != K.NO_UP, self.down_ray[c] != K.NO_DOWN
        if hi == K.NONE_HI and not has_up and not has_down:
            return None
        lo_v: float = -math.inf if has_down else (lo if lo != K.NONE_LO else int(self.up_ray[c]))
        hi_v: float = math.inf if has_up else (hi if hi != K.NONE_HI else int(self.down_ray[c]))
        return lo_v, hi_v

    def rays(self) -> Iterator[Tuple[Site, int, int]]:
        """(column, sign, start height) for every escape ray."""
        _, csh = self._grids()
        for sign, arr, none in ((1, self.up_ray, K.NO_UP), (-1, self.down_ray, K.NO_DOWN)):
            for c in np.flatnonzero(arr != none):
                idx = np.unravel_index(int(c), csh)
                yield tuple(int(self.lo[a] + idx[a]) for a in range(self.d - 1)), sign, int(arr[c])

    # -- aggregate accessors -------------------------------------------------
    @property
    def h_plus(self) -> int:
        return int(self.stats[K.S_HPLUS])

    @property
    def h_minus(self) -> int:
        return int(self.stats[K.S_HMINUS])

    @property
    def breadth(self) -> int:
        return int(self.stats[K.S_BREADTH])

    @property
    def total_steps(self) -> int:
        return int(self.stats[K.S_STEPS])

    def stored_sites(self) -> np.ndarray:
        """Coordinates (k x d) of sites holding explicit exits, i.e. excluding pure ray sites."""
        sh, _ = self._grids()
        idx = np.flatnonzero(self.odo)
        return np.stack(np.unravel_index(idx, sh), axis=1).astype(np.int64) + self.lo

    def sites(self) -> Iterator[Tuple[Site, SiteState]]:
        """Materialized sites within the block: explicit exits plus ray launch sites."""
        pts = {tuple(int(v) for v in p) for p in self.stored_sites()}
        for col, _, z in self.rays():
            pts.add(col + (z,))
        for x in sorted(pts):
            yield x, self.site(x)

    def odometer_grid(self, lo: Sequence[int], hi: Sequence[int]) -> np.ndarray:
        """Effective odometer on the box ``lo <= x <= hi`` as a dense array."""
        d = self.d
        lo = np.asarray(lo, dtype=np.int64)
        hi = np.asarray(hi, dtype=np.int64)
        out = np.zeros(tuple(int(v) for v in hi - lo + 1), dtype=np.int64)
        a = np.maximum(lo, self.lo)
        b = np.minimum(hi, self.lo + self.shape - 1)
        if np.any(a > b):
            return out
        sh, csh = self._grids()
        src = tuple(slice(int(a[k] - self.lo[k]), int(b[k] - self.lo[k]) + 1) for k in range(d))
        dst = tuple(slice(int(a[k] - lo[k]), int(b[k] - lo[k]) + 1) for k in range(d))
        # ray sites sit above (below) the stored block in every column, so the block
        # intersection holds the stored part and the rays are added over the full box height
        out[dst] = self.odo.reshape(sh)[src]
        z = np.arange(int(lo[-1]), int(hi[-1]) + 1)
        up = self.up_ray.reshape(csh)[src[:-1]][..., None]
        down = self.down_ray.reshape(csh)[src[:-1]][..., None]
        out[dst[:-1]] += (up <= z).astype(np.int64) + (down >= z).astype(np.int64)
        return out

    def audit(self) -> None:
        """Full-scan consistency check of the column index and derived per-site state."""
        sh, csh = self._grids()
        grid = self.odo.reshape(sh)
        nz = sh[-1]
        z = np.arange(nz) + self.lo[-1]
        has = grid > 0
        any_ = has.any(axis=-1).reshape(-1)
        top = np.where(has, z, K.NONE_HI).max(axis=-1).reshape(-1)
        bot = np.where(has, z, K.NONE_LO).min(axis=-1).reshape(-1)
        if not np.array_equal(np.where(any_, top, K.NONE_HI), self.col_hi):
            raise AssertionError("column max index disagrees with stored exits")
        if not np.array_equal(np.where(any_, bot, K.NONE_LO), self.col_lo):
            raise AssertionError("column min index disagrees with stored exits")
        for x, s in itertools.islice(self.sites(), 2000):
            if s.odometer != sum(s.exits):
                raise AssertionError(f"odometer != sum of exits at {x}")
            if s.rotor != self.order.next(self.initial(x), s.odometer):
                raise AssertionError(f"rotor inconsistent with odometer at {x}")

    # -- snapshot ----------------------------------------------------------
    def dumps(self) -> str:
        """Line-oriented text snapshot (one materialized site per line, then rays)."""
        lines = ["# rotorwalk snapshot v1",
                 f"d {self.d}",
                 f"order {self.order}",
                 f"rule {self.rule.kind} {self.rule.default}"]
        for x, e in sorted(self.rule.overrides.items()):
            lines.append("override " + " ".join(map(str, x)) + f" {e}")
        for x, s in self.sites():
            lines.append("site " + " ".join(map(str, x)) + f" {s.rotor} {s.odometer} "
                         + " ".join(map(str, s.exits)))
        for col, sign, z in sorted(self.rays()):
            lines.append("ray " + " ".join(map(str, col)) + f" {'+' if sign > 0 else '-'} {z}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "LatticeState":
        d = None
        order = None
        kind, default = "rho0", "rho0"
        overrides: Dict[Site, Direction] = {}
        sites: List[Tuple[Site, int]] = []
        rays: List[Tuple[Site, int, int]] = []
        for line in text.splitlines():
            if not line.strip() or line.startswith("#"):
                continue
            head, *rest = line.split()
            if head == "d":
                d = int(rest[0])
            elif head == "order":
                order = CyclicOrder.parse(rest[0])
            elif head == "rule":
                kind, default = rest
            elif head == "override":
                overrides[tuple(map(int, rest[:d]))] = Direction.parse(rest[d])
            elif head == "site":
                sites.append((tuple(map(int, rest[:d])), int(rest[d + 1])))
            elif head == "ray":
                rays.append((tuple(map(int, rest[:d - 1])), 1 if rest[d - 1] == "+" else -1, int(rest[d])))
            else:
                raise ValueError(f"unknown snapshot record {head!r}")
        rule = InitialRule.custom(overrides, default) if kind == "custom" else InitialRule(kind)
        st = cls(d, order, rule, normalize=False)
        for col, sign, z in rays:
            x = col + (z,)
            st.ensure(x)
            c = st._col(x)
            (st.up_ray if sign > 0 else st.down_ray)[c] = z
        for x, u in sites:
            st.ensure(x)
            base = st.odometer(x)
            st._set_stored(x, u - base)
        st._rebuild_stats()
        return st

    def _set_stored(self, x: Site, value: int) -> None:
        i = self._flat(x)
        c = i // int(self.shape[-1])
        self.odo[i] = value
        if value > 0:
            self.col_hi[c] = max(int(self.col_hi[c]), x[-1])
            self.col_lo[c] = min(int(self.col_lo[c]), x[-1])

    def _rebuild_stats(self) -> None:
        hp = hm = br = 0
        for x, s in self.sites():
            br = max(br, max(abs(v) for v in x[:-1]))
            if s.odometer >= 2:
                if x[-1] >= 0:
                    hp = max(hp, x[-1])
                else:
                    hm = max(hm, -x[-1])
        self.stats[K.S_HPLUS], self.stats[K.S_HMINUS], self.stats[K.S_BREADTH] = hp, hm, br

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LatticeState):
            return NotImplemented
        return self.dumps() == other.dumps()

    __hash__ = None  # mutable


def rotor_at(state: LatticeState, x: Sequence[int]) -> Direction:
    return state.rotor_at(x)


def exit_once(state: LatticeState, x: Sequence[int]) -> Direction:
    return state.exit_once(x)
