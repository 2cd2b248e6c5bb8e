"""Rotor walks on finite directed graphs with sinks.

Used to certify schedule independence of the final configuration and to
check the Holroyd-Propp discrepancy bound against exact harmonic measure.
Rotor convention matches the lattice: a particle leaves along the current
rotor, then the rotor advances to the next out-edge in the vertex's cycle.
"""

from __future__ import annotations

import random
import sys
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Set, Tuple, Union

from rotorwalk.potential import graph_hitting

DEFAULT_STEP_BUDGET = 10**7
EXHAUSTIVE_LEAF_CAP = 10**6


class ScheduleError(ValueError):
    """A schedule names a vertex with no particle, or ends before quiescence."""


class GraphError(ValueError):
    pass


@dataclass
class FiniteRotorGraph:
    """Vertices ``0..n-1``; ``out_edges[v]`` is v's exit cycle (parallel edges allowed).

    ``rotors[v]`` indexes ``out_edges[v]`` and is ignored on sinks.
    """

    out_edges: List[List[int]]
    sinks: FrozenSet[int]
    rotors: List[int]
    particles: List[int]

    def __post_init__(self) -> None:
        self.out_edges = [list(map(int, e)) for e in self.out_edges]
        self.sinks = frozenset(int(s) for s in self.sinks)
        self.rotors = [int(r) for r in self.rotors]
        self.particles = [int(p) for p in self.particles]
        self.validate()

    @property
    def n(self) -> int:
        return len(self.out_edges)

    def validate(self) -> None:
        n = self.n
        if len(self.rotors) != n or len(self.particles) != n:
            raise GraphError("rotors and particles need one entry per vertex")
        if not self.sinks:
            raise GraphError("sink set is empty")
        if any(not 0 <= s < n for s in self.sinks):
            raise GraphError("sink outside the vertex range")
        if any(p < 0 for p in self.particles):
            raise GraphError("negative particle count")
        for v in range(n):
            if any(not 0 <= t < n for t in self.out_edges[v]):
                raise GraphError(f"edge from {v} leaves the vertex range")
            if v in self.sinks:
                continue
            if not self.out_edges[v]:
                raise GraphError(f"non-sink vertex {v} has no out-edges")
            if not 0 <= self.rotors[v] < len(self.out_edges[v]):
                raise GraphError(f"rotor of {v} does not index an out-edge")
        # every non-sink must reach a sink
        rev: List[List[int]] = [[] for _ in range(n)]
        for v in range(n):
            for t in self.out_edges[v]:
                rev[t].append(v)
        seen = set(self.sinks)
        q = deque(self.sinks)
        while q:
            t = q.popleft()
            for v in rev[t]:
                if v not in seen:
                    seen.add(v)
                    q.append(v)
        stuck = [v for v in range(n) if v not in seen]
        if stuck:
            raise GraphError(f"vertices {stuck} have no path to a sink")

    def copy(self) -> "FiniteRotorGraph":
        return FiniteRotorGraph([list(e) for e in self.out_edges], self.sinks, list(self.rotors),
                                list(self.particles))

    # -- text fixture -----------------------------------------------------------
    def dumps(self) -> str:
        """``vertices N``, ``sinks ...``, then ``v rotor particles : targets`` per vertex."""
        lines = ["# rotor graph v1", f"vertices {self.n}",
                 "sinks " + " ".join(map(str, sorted(self.sinks)))]
        for v in range(self.n):
            rot = "-" if v in self.sinks else str(self.rotors[v])
            lines.append(f"{v} {rot} {self.particles[v]} : " + " ".join(map(str, self.out_edges[v])))
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "FiniteRotorGraph":
        n = None
        sinks: List[int] = []
        rows: Dict[int, Tuple[int, int, List[int]]] = {}
        for ln in text.splitlines():
            ln = ln.split("#", 1)[0].strip()
            if not ln:
                continue
            head, *rest = ln.split()
            if head == "vertices":
                n = int(rest[0])
            elif head == "sinks":
                sinks = [int(s) for s in rest]
            else:
                left, _, right = ln.partition(":")
                v, rot, cnt = left.split()
                rows[int(v)] = (0 if rot == "-" else int(rot), int(cnt), [int(t) for t in right.split()])
        if n is None or sorted(rows) != list(range(n)):
            raise GraphError("fixture must list every vertex exactly once")
        return cls([rows[v][2] for v in range(n)], frozenset(sinks),
                   [rows[v][0] for v in range(n)], [rows[v][1] for v in range(n)])


@dataclass(frozen=True)
class Stabilization:
    """Final particle counts (nonzero only on sinks), exit counts and rotors."""

    placement: Tuple[int, ...]
    exits: Tuple[int, ...]
    rotors: Tuple[int, ...]
    steps: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Schedule:
    """Which occupied non-sink vertex fires next.

    ``kind``: ``fifo`` and ``lifo`` treat particles as a queue / stack of
    tokens, ``random`` picks a uniformly random occupied vertex (``seed``),
    ``round-robin`` scans vertex ids cyclically, ``sequence`` follows
    ``choices`` exactly.
    """

    kind: str = "fifo"
    seed: int = 0
    choices: Tuple[int, ...] = ()

    KINDS = ("fifo", "lifo", "random", "round-robin", "sequence")

    def __post_init__(self) -> None:
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown schedule {self.kind!r}")

    @classmethod
    def random(cls, seed: int) -> "Schedule":
        return cls("random", seed=seed)

    @classmethod
    def sequence(cls, choices: Iterable[int]) -> "Schedule":
        return cls("sequence", choices=tuple(int(c) for c in choices))

    @classmethod
    def battery(cls, n_random: int = 20, seed: int = 0) -> List["Schedule"]:
        """fifo, lifo, round-robin and ``n_random`` random schedules."""
        return [cls("fifo"), cls("lifo"), cls("round-robin")] + [cls.random(seed * 1000 + k)
                                                                  for k in range(n_random)]


def _fire(g: FiniteRotorGraph, v: int, rotors: List[int], parts: List[int], exits: List[int]) -> int:
    e = g.out_edges[v]
    t = e[rotors[v]]
    rotors[v] = (rotors[v] + 1) % len(e)
    parts[v] -= 1
    parts[t] += 1
    exits[v] += 1
    return t


def stabilize(graph: FiniteRotorGraph, schedule: Union[Schedule, str, Sequence[int]] = "fifo", *,
              budget: int = DEFAULT_STEP_BUDGET) -> Stabilization:
    """Fire particles until every particle sits on a sink."""
    if isinstance(schedule, str):
        schedule = Schedule(schedule)
    elif not isinstance(schedule, Schedule):
        schedule = Schedule.sequence(schedule)
    g = graph
    rotors = list(g.rotors)
    parts = list(g.particles)
    exits = [0] * g.n
    sinks = g.sinks
    active = sum(parts[v] for v in range(g.n) if v not in sinks)
    steps = 0

    if schedule.kind in ("fifo", "lifo"):
        tokens = deque(v for v in range(g.n) if v not in sinks for _ in range(parts[v]))
        pop = tokens.popleft if schedule.kind == "fifo" else tokens.pop
        while tokens:
            if steps >= budget:
                raise ScheduleError(f"step budget {budget} exhausted")
            v = pop()
            t = _fire(g, v, rotors, parts, exits)
            steps += 1
            if t not in sinks:
                tokens.append(t)
    elif schedule.kind == "random":
        rng = random.Random(schedule.seed)
        occupied = sorted(v for v in range(g.n) if v not in sinks and parts[v])
        occ_set = set(occupied)
        while occupied:
            if steps >= budget:
                raise ScheduleError(f"step budget {budget} exhausted")
            v = occupied[rng.randrange(len(occupied))]
            t = _fire(g, v, rotors, parts, exits)
            steps += 1
            if parts[v] == 0:
                occupied.remove(v)
                occ_set.discard(v)
            if t not in sinks and t not in occ_set:
                occ_set.add(t)
                occupied.append(t)
    elif schedule.kind == "round-robin":
        v = 0
        while active:
            if steps >= budget:
                raise ScheduleError(f"step budget {budget} exhausted")
            while v in sinks or parts[v] == 0:
                v = (v + 1) % g.n
            t = _fire(g, v, rotors, parts, exits)
            steps += 1
            if t in sinks:
                active -= 1
            v = (v + 1) % g.n
    else:
        for v in schedule.choices:
            if v in sinks or not 0 <= v < g.n or parts[v] == 0:
                raise ScheduleError(f"schedule fires vertex {v}, which holds no movable particle")
            t = _fire(g, v, rotors, parts, exits)
            steps += 1
            if t in sinks:
                active -= 1
        if active:
            raise ScheduleError("schedule ended before every particle reached a sink")
    return Stabilization(tuple(parts), tuple(exits), tuple(rotors), steps)


def edge_counts(graph: FiniteRotorGraph, exits: Sequence[int]) -> List[List[int]]:
    """Traversals of each out-edge slot given the exit counts from the initial rotors."""
    out = []
    for v in range(graph.n):
        e = graph.out_edges[v]
        if v in graph.sinks or not e:
            out.append([0] * len(e))
            continue
        k = len(e)
        out.append([(exits[v] - ((j - graph.rotors[v]) % k) + k - 1) // k for j in range(k)])
    return out


def flow_conservation(graph: FiniteRotorGraph, result: Stabilization) -> bool:
    """For every vertex: initial particles + arrivals = exits + final particles."""
    arrivals = [0] * graph.n
    for v, counts in enumerate(edge_counts(graph, result.exits)):
        for t, c in zip(graph.out_edges[v], counts):
            arrivals[t] += c
    return all(graph.particles[v] + arrivals[v] == result.exits[v] + result.placement[v]
               for v in range(graph.n))


# -- exhaustive schedule enumeration ---------------------------------------------------

@dataclass(frozen=True)
class Enumeration:
    outcomes: FrozenSet[Stabilization]
    leaves: int  # number of distinct maximal firing sequences
    states: int  # distinct intermediate configurations visited


def enumerate_schedules(graph: FiniteRotorGraph, *, leaf_cap: int = EXHAUSTIVE_LEAF_CAP) -> Enumeration:
    """Every maximal firing sequence, by memoised search over configurations.

    Each configuration (rotors, particles, exits) is expanded once, so the
    set of reachable final triples covers all schedules even when their
    number is large. Raises ScheduleError if the schedule tree has more than
    ``leaf_cap`` leaves.
    """
    g = graph
    memo: Dict[Tuple, Tuple[FrozenSet[Stabilization], int]] = {}
    sinks = g.sinks
    limit = sys.getrecursionlimit()
    sys.setrecursionlimit(max(limit, 100000))

    def visit(rot: Tuple[int, ...], parts: Tuple[int, ...], ex: Tuple[int, ...]):
        key = (rot, parts, ex)
        hit = memo.get(key)
        if hit is not None:
            return hit
        movable = [v for v in range(g.n) if v not in sinks and parts[v]]
        if not movable:
            res = (frozenset([Stabilization(parts, ex, rot)]), 1)
        else:
            outs: Set[Stabilization] = set()
            leaves = 0
            for v in movable:
                r, p, e = list(rot), list(parts), list(ex)
                _fire(g, v, r, p, e)
                o, lv = visit(tuple(r), tuple(p), tuple(e))
                outs |= o
                leaves += lv
            if leaves > leaf_cap:
                raise ScheduleError(f"schedule tree exceeds {leaf_cap} leaves")
            res = (frozenset(outs), leaves)
        memo[key] = res
        return res

    try:
        outs, leaves = visit(tuple(g.rotors), tuple(g.particles), (0,) * g.n)
    finally:
        sys.setrecursionlimit(limit)
    return Enumeration(outs, leaves, len(memo))


# -- Holroyd-Propp -------------------------------------------------------------------------

@dataclass(frozen=True)
class HPCheck:
    H_r: int
    H_w: float
    bound: float
    verdict: bool


def holroyd_propp_check(graph: FiniteRotorGraph, placement: Optional[Sequence[int]] = None,
                        Y: Iterable[int] = (), Z: Optional[Iterable[int]] = None,
                        rotors: Optional[Sequence[int]] = None, *, tol: float = 1e-9) -> HPCheck:
    """Compare rotor hits on Y with the random-walk expectation.

    ``H_r`` counts particles the rotor walk stops on Y; ``H_w`` is
    ``sum_x s(x) h(x)`` with h the exact probability that the uniform
    out-edge walk from x first hits Z inside Y. ``bound`` is
    ``sum_{u not in Z} sum_{out-edges u->v} |h(u) - h(v)|``.
    """
    Z = graph.sinks if Z is None else frozenset(Z)
    Y = frozenset(Y)
    if not Y <= Z:
        raise ValueError("Y must be a subset of Z")
    g = FiniteRotorGraph(graph.out_edges, Z,
                         list(rotors) if rotors is not None else list(graph.rotors),
                         list(placement) if placement is not None else list(graph.particles))
    h = graph_hitting(g.out_edges, Z, Y)
    res = stabilize(g, "fifo")
    H_r = sum(res.placement[y] for y in Y)
    H_w = float(sum(g.particles[x] * h[x] for x in range(g.n)))
    bound = float(sum(abs(h[u] - h[v]) for u in range(g.n) if u not in Z for v in g.out_edges[u]))
    return HPCheck(H_r, H_w, bound, abs(H_r - H_w) <= bound + tol)


# -- fixtures and fuzzing ------------------------------------------------------------------

GRID_CYCLE = ((1, 0), (0, 1), (-1, 0), (0, -1))  # e1, e2, -e1, -e2


def grid_graph(m: int = 3, *, particles: int = 3, source: Optional[Tuple[int, int]] = None,
               rotor: int = 1) -> FiniteRotorGraph:
    """An m x m block of rotor vertices surrounded by its 4m outer neighbours as sinks.

    Vertices ``0..m*m-1`` are the block in row-major order of (x, y); sinks
    follow. Every block vertex cycles e1, e2, -e1, -e2 and starts with rotor
    index ``rotor`` (1 means +e2). Particles start at ``source`` (the centre
    by default).
    """
    block = [(x, y) for x in range(m) for y in range(m)]
    ring = sorted({(x + dx, y + dy) for x, y in block for dx, dy in GRID_CYCLE} - set(block))
    ids = {s: i for i, s in enumerate(block + ring)}
    n = len(ids)
    out = [[] for _ in range(n)]
    for (x, y) in block:
        out[ids[(x, y)]] = [ids[(x + dx, y + dy)] for dx, dy in GRID_CYCLE]
    src = source if source is not None else (m // 2, m // 2)
    parts = [0] * n
    parts[ids[src]] = particles
    rot = [rotor % 4 if i < len(block) else 0 for i in range(n)]
    return FiniteRotorGraph(out, frozenset(range(len(block), n)), rot, parts)


def random_graph(rng: random.Random, *, max_vertices: int = 12, max_particles: int = 8,
                 max_degree: int = 4) -> FiniteRotorGraph:
    """A random instance: random out-edge cycles (loops and parallel edges allowed), rotors, particles."""
    n = rng.randint(2, max(2, max_vertices))
    k = rng.randint(1, max(1, n // 3))
    sinks = frozenset(rng.sample(range(n), k))
    out: List[List[int]] = [[] for _ in range(n)]
    for v in range(n):
        if v in sinks:
            continue
        out[v] = [rng.randrange(n) for _ in range(rng.randint(1, max_degree))]
    # guarantee a path to the sinks: chain every non-sink towards a sink
    order = [v for v in range(n) if v not in sinks]
    rng.shuffle(order)
    for i, v in enumerate(order):
        nxt = order[i + 1] if i + 1 < len(order) else rng.choice(sorted(sinks))
        if nxt not in out[v]:
            out[v][rng.randrange(len(out[v]))] = nxt
    rotors = [rng.randrange(len(out[v])) if out[v] else 0 for v in range(n)]
    parts = [0] * n
    for _ in range(rng.randint(0, max_particles)):
        parts[rng.randrange(n)] += 1
    try:
        return FiniteRotorGraph(out, sinks, rotors, parts)
    except GraphError:  # an overwritten edge cut another vertex's route; draw again
        return random_graph(rng, max_vertices=max_vertices, max_particles=max_particles,
                            max_degree=max_degree)


@dataclass
class FuzzReport:
    instances: int = 0
    schedule_mismatches: int = 0
    conservation_failures: int = 0
    hp_violations: int = 0
    failures: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not (self.schedule_mismatches or self.conservation_failures or self.hp_violations)


def fuzz(instances: int = 1000, *, seed: int = 0, max_vertices: int = 12, max_particles: int = 8,
         n_random: int = 20, check_hp: bool = True) -> FuzzReport:
    """Random instances: schedule battery agreement, flow conservation and Holroyd-Propp."""
    rng = random.Random(seed)
    rep = FuzzReport()
    for i in range(instances):
        g = random_graph(rng, max_vertices=max_vertices, max_particles=max_particles)
        rep.instances += 1
        results = [stabilize(g, s) for s in Schedule.battery(n_random, seed=i)]
        if any(r != results[0] for r in results[1:]):
            rep.schedule_mismatches += 1
            rep.failures.append(g.dumps())
        if not flow_conservation(g, results[0]):
            rep.conservation_failures += 1
            rep.failures.append(g.dumps())
        if check_hp:
            Y = [s for s in sorted(g.sinks) if rng.random() < 0.5] or [min(g.sinks)]
            if not holroyd_propp_check(g, Y=Y).verdict:
                rep.hp_violations += 1
                rep.failures.append(g.dumps())
    return rep
