import math
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import chisquare

from oracles import green_by_iteration
from rotorwalk.potential import (Calibration, CalibrationMissing, Region, RegionTooLarge, ball_region,
                                 direction_draws, exact_green, fit_a_d, gradient_sum, graph_hitting,
                                 green_asymptotic, green_gradient_sum, green_residual, hitting_constant,
                                 hitting_field, jprime_profile, load_calibration, mc_alpha,
                                 solve_dirichlet)

CAL = load_calibration()


# -- exact Green function --------------------------------------------------------------

def test_green_rejects_sites_outside_ball():
    with pytest.raises(ValueError):
        exact_green(2, 5.0, (0, 0), (5, 0))
    with pytest.raises(ValueError):
        exact_green(2, 5.0, (4, 4), (0, 0))


def test_region_size_limit():
    with pytest.raises(RegionTooLarge):
        ball_region(3, 200.0)


@pytest.mark.parametrize("d,r", [(2, 5.0), (2, 6.5), (3, 3.0)])
def test_green_matches_jacobi_oracle(d, r):
    y = (1,) + (0,) * (d - 1)
    ref = green_by_iteration(d, r, y)
    for x, v in ref.items():
        assert exact_green(d, r, x, y) == pytest.approx(v, abs=1e-9)


def test_green_symmetry_random_pairs():
    rng = random.Random(3)
    pts = [tuple(int(v) - 30 for v in p) for p in Region.ball(2, 20.0).interior + 30]
    for _ in range(100):
        x, y = rng.choice(pts), rng.choice(pts)
        assert abs(exact_green(2, 20.0, x, y) - exact_green(2, 20.0, y, x)) <= 1e-9


@pytest.mark.parametrize("d,r,y", [(2, 20.0, (0, 0)), (2, 40.0, (3, -7)), (3, 15.0, (0, 0, 0)),
                                   (3, 40.0, (0, 0, 0))])
def test_green_residual(d, r, y):
    assert green_residual(d, r, y) <= 1e-10


def test_green_positive_and_monotone_in_domain():
    small = Region.ball(2, 10.0)
    for x in map(tuple, small.interior[::7]):
        g10 = exact_green(2, 10.0, x, (2, 1))
        g20 = exact_green(2, 20.0, x, (2, 1))
        assert 0 < g10 <= g20


def test_green_origin_offset_stable_and_frozen():
    offs = [exact_green(2, r, (0, 0), (0, 0)) - 2 / math.pi * math.log(r) for r in (20.0, 40.0, 80.0)]
    assert max(offs) - min(offs) < 0.02
    assert offs[-1] == pytest.approx(CAL.get("green_offset_2d"), abs=1e-9)
    assert offs[0] == pytest.approx(CAL.get("green_offset_2d_r20"), abs=1e-9)


# -- asymptotic forms ------------------------------------------------------------------

def test_green_asymptotic_examples():
    assert green_asymptotic(2, math.exp(math.pi), (0, 0)).value == pytest.approx(2.0)
    assert green_asymptotic(2, 10.0, (6, 8)).value == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        green_asymptotic(2, 10.0, (11, 0))


def test_green_asymptotic_d3_against_exact():
    approx = green_asymptotic(3, 50.0, (10, 0, 0)).value
    exact = exact_green(3, 50.0, (0, 0, 0), (10, 0, 0))
    assert abs(approx - exact) <= 0.15 * exact


def test_green_asymptotic_d2_against_exact():
    for x in [(5, 0), (10, 10), (0, 25)]:
        approx = green_asymptotic(2, 40.0, x).value
        exact = exact_green(2, 40.0, (0, 0), x)
        assert abs(approx - exact) < 0.1


def test_green_asymptotic_needs_calibration_at_origin():
    with pytest.raises(CalibrationMissing):
        green_asymptotic(3, 20.0, (0, 0, 0), Calibration())
    with pytest.raises(CalibrationMissing):
        green_asymptotic(3, 20.0, (1, 0, 0), Calibration())
    est = green_asymptotic(3, 60.0, (0, 0, 0))
    assert est.value == pytest.approx(exact_green(3, 60.0, (0, 0, 0), (0, 0, 0)), abs=1e-6)


def test_fit_a_d_close_to_continuum_constant():
    a, se = fit_a_d(3, 40.0)
    assert a == pytest.approx(3 / (2 * math.pi), rel=0.01)
    assert se < 1e-3
    assert CAL.get("a_3") == pytest.approx(3 / (2 * math.pi), rel=0.005)
    with pytest.raises(ValueError):
        fit_a_d(2)


def test_infinite_volume_green_matches_escape_probability():
    # G(0,0) on Z^3 is the reciprocal of the escape probability
    assert abs(1 / CAL.get("g0_3") - CAL.get("alpha_3")) <= 4 * CAL.get("alpha_3_se")


# -- harmonic fields -------------------------------------------------------------------

def test_hitting_field_boundary_values():
    reg = Region.ball(2, 8.0)
    h = hitting_field(reg, [(8, 0)])
    assert h[(8, 0)] == 1.0
    assert h[(-8, 0)] == 0.0 and h[(0, 8)] == 0.0
    assert h.max_residual() <= 1e-10
    with pytest.raises(ValueError):
        hitting_field(reg, [(0, 0)])
    with pytest.raises(KeyError):
        h[(20, 0)]


@pytest.mark.parametrize("d,r", [(2, 5.0), (3, 3.5)])
def test_hitting_probabilities_sum_to_one(d, r):
    reg = Region.ball(d, r)
    total = np.zeros(len(reg))
    for y in reg.boundary:
        total += hitting_field(reg, [tuple(y)]).interior_values
    assert np.abs(total - 1).max() <= 1e-9


def test_maximum_principle():
    reg = Region.ball(2, 12.0)
    rng = np.random.default_rng(5)
    data = rng.uniform(-1, 2, size=len(reg.boundary))
    h = solve_dirichlet(reg, data)
    assert h.interior_values.min() > data.min() and h.interior_values.max() < data.max()
    const = solve_dirichlet(reg, np.full(len(reg.boundary), 0.25))
    assert np.allclose(const.interior_values, 0.25, atol=1e-12)
    assert gradient_sum(const) == pytest.approx(0.0, abs=1e-9)


@pytest.mark.parametrize("r", [20.0, 40.0])
def test_hitting_decay_constant_bounded(r):
    J = hitting_constant(2, r, (int(r), 0))
    assert J <= CAL.get("J_2") + 0.01
    assert J == pytest.approx(CAL.get("J_2"), abs=0.01)


def test_gradient_sum_doubling():
    jp = CAL.get("Jprime_2")
    icpt = CAL.get("Jprime_2_intercept")
    gs = {rho: jprime_profile(rho) for rho in (10, 20, 40, 80)}
    for rho in (10, 20, 40):
        assert abs(gs[2 * rho] - gs[rho]) <= jp * math.log(2) + 0.1
    for rho, g in gs.items():
        assert g <= jp * math.log(rho) + icpt + 0.1


def test_gradient_sum_partial_ball():
    h = hitting_field(Region.ball(2, 10.0), [(10, 0)])
    assert gradient_sum(h, rho=3.0) < gradient_sum(h, rho=8.0) < gradient_sum(h)
    near = gradient_sum(h, rho=3.0, center=(9, 0))
    assert near > gradient_sum(h, rho=3.0)


@pytest.mark.parametrize("d,bound", [(2, 11.0), (3, 19.0)])
def test_green_gradient_sum_linear_in_rho(d, bound):
    ratios = [green_gradient_sum(d, 40.0, (0,) * d, rho) / rho for rho in (5, 10, 20)]
    assert max(ratios) <= bound
    assert max(ratios) / min(ratios) < 1.1


# -- directed graphs -------------------------------------------------------------------

def test_graph_hitting_values():
    # 0 -> {1, 2}; 1 -> {0, 3}; sinks 2 and 3
    out = [[1, 2], [0, 3], [], []]
    h = graph_hitting(out, sinks=[2, 3], target=[3])
    # h0 = h1/2, h1 = h0/2 + 1/2  ->  h1 = 2/3, h0 = 1/3
    assert h[0] == pytest.approx(1 / 3) and h[1] == pytest.approx(2 / 3)
    assert h[2] == 0 and h[3] == 1


def test_graph_hitting_parallel_edges():
    h = graph_hitting([[1, 1, 2], [], []], sinks=[1, 2], target=[1])
    assert h[0] == pytest.approx(2 / 3)


def test_graph_hitting_unreachable():
    with pytest.raises(ValueError):
        graph_hitting([[1], [0], []], sinks=[2], target=[2])


# -- Monte-Carlo escape probability --------------------------------------------------------

def test_mc_alpha_errors():
    with pytest.raises(ValueError):
        mc_alpha(2, 100, 100)
    with pytest.raises(ValueError):
        mc_alpha(3, 0, 100)
    with pytest.raises(ValueError):
        mc_alpha(3, 10, 5)


def test_mc_alpha_single_trial_and_determinism():
    assert mc_alpha(3, 1, 50, seed=4).escapes in (0, 1)
    a = mc_alpha(3, 20000, 200, seed=11)
    b = mc_alpha(3, 20000, 200, seed=11)
    assert a == b
    assert mc_alpha(3, 20000, 200, seed=11, shards=7).escapes == a.escapes
    assert a.as_dict()["estimate"] == a.estimate


def test_mc_alpha_decreases_with_radius():
    # common random numbers: with the same seed and exact walks, a larger ball can only lose escapes
    small = mc_alpha(3, 20000, 12, seed=2, exact_radius=None)
    large = mc_alpha(3, 20000, 24, seed=2, exact_radius=None)
    assert large.escapes <= small.escapes


@pytest.mark.parametrize("R,exact_radius", [(12, None), (40, 32)])
def test_mc_alpha_matches_green(R, exact_radius):
    est = mc_alpha(3, 400_000, R, seed=1, exact_radius=exact_radius)
    target = 1 / exact_green(3, float(R), (0, 0, 0), (0, 0, 0))
    assert abs(est.estimate - target) <= 4 * est.std_error


def test_direction_draws_uniform():
    for d in (2, 3):
        draws = direction_draws(9, 200_000, d)
        assert draws.min() >= 0 and draws.max() < 2 * d
        counts = np.bincount(draws.astype(np.int64), minlength=2 * d)
        assert chisquare(counts).pvalue > 0.001
    assert not np.array_equal(direction_draws(9, 100, 3), direction_draws(9, 100, 3, stream=1))


# -- calibration file ---------------------------------------------------------------------

def test_calibration_round_trip(tmp_path, monkeypatch):
    cal = Calibration()
    cal.set("a_3", 0.5, "made up")
    cal.set("J_2", 0.25)
    back = Calibration.loads(cal.dumps())
    assert back.values == cal.values and back.notes["a_3"] == "made up"
    p = tmp_path / "cal.txt"
    p.write_text(cal.dumps())
    monkeypatch.setenv("ROTORWALK_CALIBRATION", str(p))
    assert load_calibration().get("a_3") == 0.5
    with pytest.raises(ValueError):
        Calibration.loads("x = 1\n")
    with pytest.raises(ValueError):
        Calibration.loads("# rotorwalk calibration v99\n")


def test_packaged_calibration_has_every_key():
    for key in ("J_2", "Jprime_2", "Jprime_2_intercept", "a_3", "alpha_3", "alpha_3_se", "g0_3",
                "green_offset_2d"):
        assert CAL.get(key) is not None


@settings(max_examples=20)
@given(st.integers(-9, 9), st.integers(-9, 9))
def test_green_bounded_by_origin_value(a, b):
    if a * a + b * b >= 100:
        return
    assert exact_green(2, 10.0, (a, b), (0, 0)) <= exact_green(2, 10.0, (0, 0), (0, 0)) + 1e-12
