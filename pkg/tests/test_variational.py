from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gexpect.functionals import CylinderFunctional, PathFunctional, linear_clip, tanh, two_time
from gexpect.pathsim import ControlProcess, SimpleIntegrand, TimeGrid, simulate_paths
from gexpect.uncertainty import ThetaSet
from gexpect.upperexp import (ControlFamily, FiniteList, GridSearch, StateFeedbackGrid,
                              constant_family)
from gexpect.variational import (VariationalConfig, build_bar_control, build_hat_control,
                                 clark_ocone_control, composition_check, density_checks,
                                 entropy_bound_appli_check, entropy_lower_bound_check,
                                 girsanov_check, lhs_log_mgf, penalized, random_deterministic_h,
                                 random_simple_h, relation_residual, rhs_value,
                                 roundtrip_residual, scheffe_check, verify_representation)

LOG_MGF_TANH_UNIT = 0.1889260589705691


@pytest.fixture
def grid():
    return TimeGrid(20)


@pytest.fixture
def ftanh():
    return CylinderFunctional.endpoint(tanh())


def test_lhs_pde_oracle(unit, ftanh):
    val, tol, src = lhs_log_mgf(ftanh, unit)
    assert src == "pde" and tol < 1e-3
    assert val == pytest.approx(LOG_MGF_TANH_UNIT, abs=1e-3)


def test_lhs_two_time_oracle(unit):
    f = two_time(np.tanh, lambda x: 0.5 * np.tanh(x), 0.5, 1.0, 1.5, 1.5, "tt")
    val, _, src = lhs_log_mgf(f, unit, nx=401)
    assert src == "pde" and val == pytest.approx(0.16745899107159384, abs=1e-3)


def test_lhs_mc_from_below(interval, ftanh):
    # e^tanh is neither convex nor concave: deterministic volatilities undershoot, a
    # feedback switching where the curvature of u changes sign recovers the PDE value
    pde, _, _ = lhs_log_mgf(ftanh, interval)
    mc, se, src = lhs_log_mgf(ftanh, interval, "mc", n_paths=40_000, n_steps=20)
    assert src == "mc" and mc <= pde + 3 * se
    fam = ControlFamily(StateFeedbackGrid(interval, TimeGrid(20), 2, (0.6,)), GridSearch())
    fb, se_fb, _ = lhs_log_mgf(ftanh, interval, "mc", n_paths=40_000, n_steps=20, family=fam)
    assert fb > mc and abs(fb - pde) < 3 * se_fb + 5e-3


def test_lhs_rejects_bad_input(interval):
    with pytest.raises(ValueError):
        lhs_log_mgf(PathFunctional(lambda b: b.B[:, -1, 0], math.inf, "B1"), interval)
    three = CylinderFunctional((0.25, 0.5, 1.0), lambda a, b, c: a[..., 0], 1, 1, "three")
    with pytest.raises(ValueError):
        lhs_log_mgf(three, interval, "pde")


@pytest.mark.parametrize("index", range(4))
def test_shift_relations_hold(interval, grid, index):
    h = random_simple_h(grid, 0, index)
    batch = simulate_paths(ControlProcess.feedback(
        interval, grid, lambda k, hist: np.where(hist.B[:, k, 0] > 0, 1.0, 0.5)), 200, 5)
    assert relation_residual(h, build_bar_control(h), batch, -1) < 1e-12
    hat = build_hat_control(h)
    assert relation_residual(h, hat, batch, 1) < 1e-12


def test_roundtrip_for_deterministic_h(interval, grid):
    h = random_deterministic_h(grid, 0, 1)
    batch = simulate_paths(ControlProcess.constant(interval, grid, 0.7), 50, 0)
    assert build_hat_control(h) is h
    assert roundtrip_residual(h, h, batch) < 1e-14


def test_random_h_bounded_and_reproducible(interval, grid):
    batch = simulate_paths(ControlProcess.constant(interval, grid, 1.0), 500, 0)
    for i in range(5):
        a = random_simple_h(grid, 3, i, h_max=0.7).values(batch)
        b = random_simple_h(grid, 3, i, h_max=0.7).values(batch)
        assert np.array_equal(a, b) and np.max(np.abs(a)) <= 0.7 + 1e-15
    assert not np.array_equal(random_simple_h(grid, 3, 0).values(batch),
                              random_simple_h(grid, 4, 0).values(batch))


def test_penalized_zero_is_identity(interval, grid, ftanh):
    batch = simulate_paths(ControlProcess.constant(interval, grid, 1.0), 20, 0)
    X = penalized(ftanh, SimpleIntegrand.zero(grid))
    assert np.array_equal(X(batch), ftanh(batch))


def test_constant_h_rhs_closed_form(unit):
    # with sigma = 1 and constant h: f(B_1 + h) - h^2/2
    grid = TimeGrid(10)
    h = SimpleIntegrand.constant(grid, [0.4])
    f = CylinderFunctional.endpoint(linear_clip(50))
    est = rhs_value(f, h, constant_family(unit, grid, 1), 20_000, 0)
    assert abs(est.value - (0.4 - 0.08)) < 3 * est.stderr


def test_rhs_below_lhs_for_random_h(interval, ftanh):
    lhs, tol, _ = lhs_log_mgf(ftanh, interval)
    grid = TimeGrid(20)
    for i in range(3):
        est = rhs_value(ftanh, random_simple_h(grid, 1, i), constant_family(interval, grid, 3),
                        10_000, i)
        assert est.value <= lhs + tol + 3 * est.stderr


def test_clark_ocone_gradient_bounded(interval):
    co = clark_ocone_control(tanh(), interval, TimeGrid(50), nx=301)
    assert co.h.h_max == pytest.approx(math.exp(2) * 1.0)
    batch = simulate_paths(co.optimal_theta(), 500, 0)
    xi = co.h.values(batch)
    assert np.max(np.abs(xi)) <= 1.0 + 1e-9 and co.outside_fraction == 0.0


def test_representation_equality_linear_case(unit):
    # Theta = {1}: the classical variational formula, attained by Clark-Ocone
    cfg = VariationalConfig(n_steps=20, n_paths=4000, search_paths=2000, n_random_h=2,
                            co_steps=100, co_paths=20_000, nx=401)
    rep = verify_representation(CylinderFunctional.endpoint(tanh()), unit, cfg)
    assert rep.passed and rep.equality_checked
    assert rep.rhs_argmax.startswith("clark_ocone")
    assert abs(rep.gap) < cfg.gap_tol


def test_representation_equality_interval(interval):
    cfg = VariationalConfig(n_steps=20, n_paths=4000, search_paths=2000, n_random_h=2,
                            co_steps=100, co_paths=20_000, nx=401)
    rep = verify_representation(CylinderFunctional.endpoint(tanh()), interval, cfg)
    assert rep.passed and rep.lower_bound_ok and rep.equality_ok
    assert rep.gap < cfg.gap_tol + 3 * rep.rhs_stderr + rep.lhs_tol


def test_girsanov_and_density(interval, grid):
    F = [CylinderFunctional.endpoint(tanh()),
         PathFunctional(lambda b: np.cos(b.B[:, 10, 0]) * np.sin(b.B[:, -1, 0]), 1.0, "cs")]
    hs = [random_simple_h(grid, 2, i) for i in range(2)]
    ctl = [ControlProcess.constant(interval, grid, s) for s in (0.5, 1.0)]
    rep = girsanov_check(F, hs, ctl, 20_000, 0)
    assert rep.passed and len(rep.rows) == 8
    dens = density_checks(hs, ctl, interval, 20_000, 0)
    assert dens.passed
    assert all(r["moment2"] <= r["bound2"] for r in dens.rows)


def test_entropy_checks(interval, grid, ftanh):
    h = random_simple_h(grid, 5, 0)
    ctl = [ControlProcess.constant(interval, grid, s) for s in (0.5, 0.75, 1.0)]
    assert entropy_lower_bound_check(ftanh, h, interval, ctl, 10_000, 0).passed
    appli = entropy_bound_appli_check(h, interval, ctl, 10_000, 0)
    assert appli.passed and appli.summary["left_sup"] <= appli.summary["bound"] + \
        appli.summary["tol"]


@given(st.floats(-1, 1), st.floats(-1, 1))
@settings(max_examples=8)
def test_entropy_inequality_deterministic_h(a, b):
    th = ThetaSet.interval(1.0, 1.0)
    grid = TimeGrid(4)
    h = SimpleIntegrand.schedule(grid, [a, a, b, b])
    f = CylinderFunctional.endpoint(tanh())
    rep = entropy_lower_bound_check(f, h, th, [ControlProcess.constant(th, grid, 1.0)], 4000, 0,
                                    lhs=(LOG_MGF_TANH_UNIT, 1e-6))
    assert rep.passed


def test_scheffe_rate_and_bound(interval, grid):
    h, g = random_simple_h(grid, 7, 0), random_simple_h(grid, 7, 1)
    rep = scheffe_check(h, g, ControlProcess.constant(interval, grid, 1.0), 20_000, 0)
    assert rep.passed
    assert all(0.4 < r["ratio"] < 0.6 for r in rep.rows[1:])
    # the same data cannot pass a ratio window that excludes linear decay
    strict = scheffe_check(h, g, ControlProcess.constant(interval, grid, 1.0), 20_000, 0,
                           ratio_range=(0.8, 0.9))
    assert not strict.passed


def test_composition(interval, grid, ftanh):
    h = random_simple_h(grid, 9, 0)
    ctl = ControlProcess.feedback(interval, grid,
                                  lambda k, hist: np.where(hist.B[:, k, 0] > 0, 0.5, 1.0))
    assert composition_check(ftanh, h, ctl, 20_000, 0).passed


def test_finite_family_rhs(interval, grid, ftanh):
    fam = ControlFamily(FiniteList([ControlProcess.constant(interval, grid, 1.0)]))
    a = rhs_value(ftanh, random_simple_h(grid, 0, 0), fam, 1000, 0)
    b = rhs_value(ftanh, random_simple_h(grid, 0, 0), fam, 1000, 0)
    assert a.value == b.value
