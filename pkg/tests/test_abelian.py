import random

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from oracles import all_firing_outcomes
from rotorwalk.abelian import (FiniteRotorGraph, GraphError, Schedule, ScheduleError, Stabilization,
                               edge_counts, enumerate_schedules, flow_conservation, fuzz, grid_graph,
                               holroyd_propp_check, random_graph, stabilize)
from rotorwalk.potential import Region, hitting_field

# exhaustive enumeration of the 3x3 block, 3 particles at the centre, rotors at +e2
GRID_LEAVES = 189
GRID_EXITS = (0, 1, 1, 1, 4, 1, 0, 1, 1)
GRID_ROTORS = (1, 2, 2, 2, 1, 2, 1, 2, 2)
# H_r for each single-sink target Y (sinks in sorted order), 5 particles, rotor rotations 0..3
GRID_HR = {
    0: [0, 0, 0, 0, 0, 0, 1, 0, 1, 1, 1, 1],
    1: [0, 1, 1, 0, 1, 0, 1, 0, 1, 0, 0, 0],
    2: [1, 1, 1, 1, 0, 1, 0, 0, 0, 0, 0, 0],
    3: [0, 0, 0, 1, 0, 1, 0, 1, 0, 1, 1, 0],
}


def path_graph(particles=2):
    return FiniteRotorGraph([[1], [2], []], {2}, [0, 0, 0], [particles, 0, 0])


def test_zero_particles():
    g = grid_graph(particles=0)
    res = stabilize(g, "lifo")
    assert sum(res.placement) == 0 and sum(res.exits) == 0
    assert list(res.rotors) == g.rotors


@pytest.mark.parametrize("sched", ["fifo", "lifo", "round-robin", Schedule.random(4), [0, 1, 0, 1]])
def test_path_graph(sched):
    res = stabilize(path_graph(), sched)
    assert res.placement == (0, 0, 2) and res.exits[:2] == (2, 2)


def test_schedule_errors():
    g = path_graph()
    with pytest.raises(ScheduleError):
        stabilize(g, [1])
    with pytest.raises(ScheduleError):
        stabilize(g, [0])
    with pytest.raises(ScheduleError):
        stabilize(g, [2])
    with pytest.raises(ScheduleError):
        stabilize(FiniteRotorGraph([[0, 1], []], {1}, [0, 0], [1, 0]), "fifo", budget=0)
    with pytest.raises(ValueError):
        Schedule("bogus")


def test_graph_validation():
    with pytest.raises(GraphError):
        FiniteRotorGraph([[1], [0], []], {2}, [0, 0, 0], [1, 0, 0])  # no path to the sink
    with pytest.raises(GraphError):
        FiniteRotorGraph([[1], []], {1}, [3, 0], [1, 0])
    with pytest.raises(GraphError):
        FiniteRotorGraph([[], []], {1}, [0, 0], [1, 0])
    with pytest.raises(GraphError):
        FiniteRotorGraph([[1], []], set(), [0, 0], [1, 0])
    with pytest.raises(GraphError):
        FiniteRotorGraph([[5], []], {1}, [0, 0], [1, 0])


def test_grid_fixture_exhaustive():
    g = grid_graph()
    e = enumerate_schedules(g)
    assert e.leaves == GRID_LEAVES and len(e.outcomes) == 1
    (out,) = e.outcomes
    assert out.exits[:9] == GRID_EXITS and out.rotors[:9] == GRID_ROTORS
    assert sum(out.placement) == 3
    assert stabilize(g, "fifo") == out


def test_grid_fixture_against_naive_enumeration():
    g = grid_graph()
    outs, leaves = all_firing_outcomes(g.out_edges, g.sinks, g.rotors, g.particles)
    assert leaves == GRID_LEAVES
    mine = enumerate_schedules(g)
    assert {(o.placement, o.exits, o.rotors) for o in mine.outcomes} == outs


@settings(max_examples=40)
@given(st.integers(0, 10**6))
def test_enumeration_matches_naive_on_random_graphs(seed):
    g = random_graph(random.Random(seed), max_vertices=6, max_particles=3, max_degree=3)
    assume(stabilize(g).steps <= 8)  # at most 8! firing sequences for the naive walk
    outs, leaves = all_firing_outcomes(g.out_edges, g.sinks, g.rotors, g.particles)
    e = enumerate_schedules(g)
    assert e.leaves == leaves
    assert {(o.placement, o.exits, o.rotors) for o in e.outcomes} == outs
    assert len(outs) == 1


def test_enumeration_leaf_cap():
    g = grid_graph(particles=4)
    with pytest.raises(ScheduleError):
        enumerate_schedules(g, leaf_cap=100)


def test_fixture_text_round_trip():
    g = grid_graph(particles=5, rotor=2)
    back = FiniteRotorGraph.loads(g.dumps())
    assert back == g
    with pytest.raises(GraphError):
        FiniteRotorGraph.loads("vertices 2\nsinks 1\n0 0 1 : 1\n")


@settings(max_examples=80)
@given(st.integers(0, 10**6))
def test_schedule_battery_and_conservation(seed):
    g = random_graph(random.Random(seed))
    results = [stabilize(g, s) for s in Schedule.battery(20, seed=seed)]
    assert all(r == results[0] for r in results)
    assert flow_conservation(g, results[0])
    assert sum(results[0].placement) == sum(g.particles)
    assert all(results[0].placement[v] == 0 for v in range(g.n) if v not in g.sinks)


def test_edge_counts_sum_to_exits():
    g = grid_graph(particles=7)
    res = stabilize(g)
    for v, counts in enumerate(edge_counts(g, res.exits)):
        assert sum(counts) == res.exits[v]


def test_flow_conservation_detects_tampering():
    g = grid_graph()
    res = stabilize(g)
    bad = Stabilization(res.placement, (res.exits[0] + 1,) + res.exits[1:], res.rotors)
    assert not flow_conservation(g, bad)


# -- Holroyd-Propp ---------------------------------------------------------------------------

def test_hp_particles_on_sinks():
    g = grid_graph(particles=0)
    sinks = sorted(g.sinks)
    placement = [0] * g.n
    placement[sinks[0]] = 3
    placement[sinks[1]] = 2
    c = holroyd_propp_check(g, placement, Y=[sinks[0]])
    assert c.H_r == 3 and c.H_w == pytest.approx(3.0) and c.verdict


def test_hp_rejects_y_outside_z():
    g = grid_graph()
    with pytest.raises(ValueError):
        holroyd_propp_check(g, Y=[0])


@pytest.mark.parametrize("rot", range(4))
def test_hp_grid_golden(rot):
    g = grid_graph(particles=5, rotor=rot)
    got = []
    for y in sorted(g.sinks):
        c = holroyd_propp_check(g, Y=[y])
        assert c.verdict
        assert abs(c.H_r - c.H_w) <= c.bound
        got.append(c.H_r)
    assert got == GRID_HR[rot]
    assert sum(got) == 5


def test_grid_hitting_agrees_with_lattice_solver():
    # graph hitting probabilities on the 3x3 block equal the lattice Dirichlet solve
    from rotorwalk.potential import graph_hitting

    g = grid_graph()
    block = [(x, y) for x in range(3) for y in range(3)]
    ring = sorted({(x + dx, y + dy) for x, y in block for dx, dy in ((1, 0), (0, 1), (-1, 0), (0, -1))}
                  - set(block))
    reg = Region(2, np.array(block))
    for k, y in enumerate(ring):
        h = graph_hitting(g.out_edges, g.sinks, [9 + k])
        lat = hitting_field(reg, [y])
        for i, x in enumerate(block):
            assert h[i] == pytest.approx(lat[x], abs=1e-12)


def test_hp_with_explicit_rotors_and_subset_z():
    g = random_graph(random.Random(17), max_vertices=10, max_particles=6)
    c = holroyd_propp_check(g, rotors=[0] * g.n, Y=[min(g.sinks)])
    assert c.verdict


def test_fuzz_small_run():
    rep = fuzz(60, seed=3)
    assert rep.instances == 60 and rep.ok and rep.failures == []
