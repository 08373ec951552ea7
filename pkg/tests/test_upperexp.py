from __future__ import annotations

import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gexpect.functionals import CylinderFunctional, abs_clip, constant, neg_abs_clip, tanh
from gexpect.gheat import g_expectation_cylinder_1
from gexpect.pathsim import ControlProcess, TimeGrid
from gexpect.uncertainty import ThetaSet
from gexpect.upperexp import (ControlFamily, CoordinateAscent, CrossEntropy, FamilyError,
                              FiniteList, GridSearch, PiecewiseConstantParam, StateFeedbackGrid,
                              constant_family, default_family, estimate_lower, estimate_upper,
                              evaluate_control, theta_levels, write_trace)

SQRT_2_PI = 0.7978845608028654


@pytest.fixture
def grid():
    return TimeGrid(20)


def test_theta_levels_contain_extremes():
    lv = theta_levels(ThetaSet.interval(0.5, 1.0), 3)
    assert [float(v[0, 0]) for v in lv] == [0.5, 0.75, 1.0]
    assert len(theta_levels(ThetaSet.interval(0.7, 0.7), 5)) == 1
    box = theta_levels(ThetaSet.box([[0.5, 1.0], [0.2, 0.4]]), 2)
    assert len(box) == 4 and any(np.allclose(b, np.diag([1.0, 0.4])) for b in box)


def test_convex_upper_matches_pde(interval, grid):
    X = CylinderFunctional.endpoint(abs_clip(10))
    est = estimate_upper(X, constant_family(interval, grid, 5), 40_000, 0)
    assert abs(est.value - SQRT_2_PI) < 3 * est.stderr + 5e-3
    assert est.argmax == "blocks[1]"


def test_concave_lower_matches_half(interval, grid):
    X = CylinderFunctional.endpoint(abs_clip(10))
    est = estimate_lower(X, constant_family(interval, grid, 5), 40_000, 0)
    assert abs(est.value - 0.5 * SQRT_2_PI) < 3 * est.stderr + 5e-3
    assert est.argmax == "blocks[0.5]"


def test_upper_minus_lower_sublinear(interval, grid):
    X = CylinderFunctional.endpoint(neg_abs_clip(10))
    up = estimate_upper(X, constant_family(interval, grid, 3), 20_000, 1)
    lo = estimate_lower(X, constant_family(interval, grid, 3), 20_000, 1)
    assert lo.value <= up.value
    pde = g_expectation_cylinder_1(interval, neg_abs_clip(10), 1.0)
    assert abs(up.value - pde) < 3 * up.stderr + 5e-3


@given(st.floats(-5, 5))
@settings(max_examples=10)
def test_constant_functional_exact(c):
    th = ThetaSet.interval(0.5, 1.0)
    g = TimeGrid(4)
    est = estimate_upper(CylinderFunctional.endpoint(constant(c)), constant_family(th, g, 3),
                         100, 0)
    assert est.value == pytest.approx(c, abs=1e-12) and est.stderr == pytest.approx(0, abs=1e-12)


def test_family_never_exceeds_pde(interval, grid):
    # every family is a subset of admissible controls, so the search value stays below u
    X = CylinderFunctional.endpoint(tanh())
    pde = g_expectation_cylinder_1(interval, tanh(), 1.0)
    for fam in (default_family(interval, grid),
                ControlFamily(StateFeedbackGrid(interval, grid), CrossEntropy(iterations=3))):
        est = estimate_upper(X, fam, 20_000, 2, search_paths=5000)
        assert est.value <= pde + 3 * est.stderr + 1e-3


def test_feedback_search_improves_on_its_start(interval, grid):
    # the all-hi feedback table is the constant control 1, run on the same noise
    X = CylinderFunctional((1.0,), lambda x: np.cos(2 * x[..., 0]), 1.0, 2.0, "cos2")
    hi = estimate_upper(X, ControlFamily(FiniteList([ControlProcess.constant(interval, grid, 1.0)])),
                        5000, 3)
    fb = estimate_upper(X, ControlFamily(StateFeedbackGrid(interval, grid, 2, (-0.8, 0.8)),
                                         CoordinateAscent(2, 1)), 5000, 3)
    assert fb.search_value >= hi.search_value
    assert fb.search_value > hi.search_value + 0.01


def test_search_is_deterministic(interval, grid):
    X = CylinderFunctional.endpoint(tanh())
    fam = ControlFamily(PiecewiseConstantParam(interval, grid, 2), CrossEntropy(iterations=2))
    a = estimate_upper(X, fam, 2000, 7)
    b = estimate_upper(X, fam, 2000, 7, workers=2)
    assert (a.value, a.params, a.trace) == (b.value, b.params, b.trace)


def test_finite_list_and_errors(interval, grid):
    ctl = [ControlProcess.constant(interval, grid, s) for s in (0.5, 1.0)]
    est = estimate_upper(CylinderFunctional.endpoint(abs_clip(10)),
                         ControlFamily(FiniteList(ctl)), 2000, 0)
    assert est.params == (1,)
    with pytest.raises(FamilyError):
        FiniteList([])
    with pytest.raises(FamilyError):
        PiecewiseConstantParam(interval, grid, blocks=3)
    too_big = ControlFamily(PiecewiseConstantParam(interval, grid, 20), GridSearch(100))
    with pytest.raises(FamilyError):
        estimate_upper(CylinderFunctional.endpoint(tanh()), too_big, 10, 0)


def test_evaluate_control_shape_check(interval, grid):
    with pytest.raises(ValueError):
        evaluate_control(lambda b: np.zeros((b.n, 2)), ControlProcess.constant(interval, grid, 1),
                         10, 0)


def test_trace_csv(tmp_path, interval, grid):
    est = estimate_upper(CylinderFunctional.endpoint(tanh()), default_family(interval, grid),
                         1000, 0)
    write_trace(est, tmp_path / "trace.csv")
    rows = list(csv.reader(open(tmp_path / "trace.csv")))
    assert rows[0] == ["iteration", "best_value", "candidate_hash"]
    vals = [float(r[1]) for r in rows[1:]]
    assert vals == sorted(vals) and all(len(r[2]) == 12 for r in rows[1:])
    assert math.isfinite(est.search_value)
