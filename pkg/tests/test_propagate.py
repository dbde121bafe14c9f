"""Integration: grids, impulsive runs, smooth oracle, convergence tables."""

import math

import numpy as np
import pytest

from flowbox import (
    ValidationError,
    approximation_check,
    constant_ordinary,
    integrate_impulsive,
    integrate_smooth,
    make_grid,
    piecewise_constant,
    piecewise_linear,
    robustness_gap,
    trajectory_l1_distance,
)


def test_grid_contains_every_breakpoint_exactly():
    grid = make_grid(1.0, 0.3, [[0.5], [0.25, 0.999999999999]])
    assert 0.5 in grid
    assert 0.25 in grid
    assert grid[0] == 0.0 and grid[-1] == 1.0
    assert np.all(np.diff(grid) > 0)


def test_grid_rejects_bad_steps():
    with pytest.raises(ValidationError):
        make_grid(1.0, 0.0)
    with pytest.raises(ValidationError):
        make_grid(1.0, -0.1)
    with pytest.raises(ValidationError):
        make_grid(1.0, 2.0)


def test_shift_system_jump_bookkeeping(s_const, ctx_const):
    u = piecewise_constant([0.0, 0.5, 1.0], [[0.0], [2.0]])
    a = constant_ordinary(1.0, [1.0])
    traj = integrate_impulsive(s_const, ctx_const, u, a, step=0.01)
    k = int(np.flatnonzero(traj.t == 0.5)[0])
    assert traj.jump_mask()[k]
    assert abs(traj.x_left[k, 0] - 0.5) <= 1e-10
    assert abs(traj.x_right[k, 0] - 2.5) <= 1e-10
    assert abs(traj.x_point[-1, 0] - 3.0) <= 1e-8
    # the straightened state never jumps: xi = x - u throughout
    np.testing.assert_allclose(traj.xi[:, 0],
                               traj.x_right[:, 0] - traj.u_right[:, 0],
                               atol=1e-9)


def test_scaling_system_pure_jump_is_exact(s_lin, ctx_lin):
    u = piecewise_constant([0.0, 0.5, 1.0], [[0.0], [math.log(2.0)]])
    a = constant_ordinary(1.0, [0.0])
    traj = integrate_impulsive(s_lin, ctx_lin, u, a, step=0.01)
    # zero drift: xi frozen at x0, x multiplies by exp(jump)
    assert np.ptp(traj.xi[:, 0]) == 0.0
    assert abs(traj.x_point[-1, 0] - 2.0) <= 1e-10
    k = int(np.flatnonzero(traj.t == 0.5)[0])
    assert abs(traj.x_right[k, 0] - 2.0 * traj.x_left[k, 0]) <= 1e-10


def test_impulsive_rejects_controls_that_miss_u0(s_const, ctx_const):
    u = piecewise_constant([0.0, 1.0], [[1.5]])
    a = constant_ordinary(1.0, [0.0])
    with pytest.raises(ValidationError):
        integrate_impulsive(s_const, ctx_const, u, a, step=0.1)


def test_smooth_and_impulsive_agree_on_continuous_controls(s_lin, ctx_lin):
    u = piecewise_linear([0.0, 0.5, 1.0], [[0.0], [1.0], [1.0]])
    a = constant_ordinary(1.0, [0.5])
    imp = integrate_impulsive(s_lin, ctx_lin, u, a, step=1e-3)
    smo = integrate_smooth(s_lin, ctx_lin, u, a, step=1e-3)
    gap = 0.0
    for t in (0.25, 0.5, 0.75, 1.0):
        ki = int(np.flatnonzero(np.isclose(imp.t, t))[0])
        ks = int(np.flatnonzero(np.isclose(smo.t, t))[0])
        gap = max(gap, abs(imp.x_point[ki, 0] - smo.x_point[ks, 0]))
    assert gap <= 1e-5


def test_custom_start_state_is_honoured(s_const, ctx_const):
    u = piecewise_constant([0.0, 1.0], [[0.0]])
    a = constant_ordinary(1.0, [1.0])
    traj = integrate_impulsive(s_const, ctx_const, u, a, step=0.1,
                               x0=[5.0])
    assert abs(traj.x_point[-1, 0] - 6.0) <= 1e-10


def test_l1_distance_between_shifted_runs(s_const, ctx_const):
    u = piecewise_constant([0.0, 1.0], [[0.0]])
    a = constant_ordinary(1.0, [1.0])
    ta = integrate_impulsive(s_const, ctx_const, u, a, step=0.05)
    tb = integrate_impulsive(s_const, ctx_const, u, a, step=0.05, x0=[1.0])
    # constant offset of 1 over a unit interval
    assert abs(trajectory_l1_distance(ta, tb) - 1.0) <= 1e-12


def test_approximation_table_halves_with_k(s_const, ctx_const):
    u = piecewise_constant([0.0, 0.5, 1.0], [[0.0], [2.0]])
    a = constant_ordinary(1.0, [1.0])
    report = approximation_check(s_const, ctx_const, u, a, ks=(10, 20, 40),
                                 step=1e-3)
    assert report.passed
    assert len(report.rows) == 3
    for ratio in report.ratios:
        assert 0.4 <= ratio <= 0.6
    doc = report.to_json_dict()
    assert doc["check"] == "approximation"
    assert [r["k"] for r in doc["rows"]] == [10, 20, 40]


def test_approximation_rejects_unsorted_ks(s_const, ctx_const):
    u = piecewise_constant([0.0, 0.5, 1.0], [[0.0], [2.0]])
    a = constant_ordinary(1.0, [1.0])
    with pytest.raises(ValidationError):
        approximation_check(s_const, ctx_const, u, a, ks=(20, 10))


def test_robustness_identical_pair_is_consistent(s_lin, ctx_lin):
    u = piecewise_linear([0.0, 1.0], [[0.0], [0.5]])
    a = constant_ordinary(1.0, [0.25])
    report = robustness_gap(s_lin, ctx_lin,
                            [([1.0], u, [1.0], u)], a, step=0.01)
    assert report.passed
    assert report.max_ratio == 0.0
    assert report.rows[0].lhs <= 1e-10


def test_robustness_ratio_scale_on_shifted_start(s_const, ctx_const):
    u = piecewise_linear([0.0, 1.0], [[0.0], [0.0]])
    a = constant_ordinary(1.0, [0.0])
    report = robustness_gap(s_const, ctx_const,
                            [([0.0], u, [1.0], u)], a, step=0.01)
    # trajectories differ by the constant 1: lhs = 1 + 1, rhs = 1
    assert abs(report.rows[0].ratio - 2.0) <= 1e-9
    assert report.passed


def test_robustness_rejects_jumpy_controls(s_const, ctx_const):
    jumpy = piecewise_constant([0.0, 0.5, 1.0], [[0.0], [1.0]])
    a = constant_ordinary(1.0, [0.0])
    with pytest.raises(ValidationError):
        robustness_gap(s_const, ctx_const,
                       [([0.0], jumpy, [0.0], jumpy)], a)
