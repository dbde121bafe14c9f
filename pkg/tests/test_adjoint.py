"""Costate solvers: transformed sweep, pull-back, lifted-field audit."""

import math

import numpy as np
import pytest

from flowbox import (
    TransformError,
    ValidationError,
    audit_lifted_commutativity,
    constant_ordinary,
    integrate_impulsive,
    piecewise_constant,
    piecewise_linear,
    pull_back_adjoint,
    solve_original_adjoint,
    solve_transformed_adjoint,
    transformed_cost_gradient,
)


def test_cost_gradient_through_the_map_shift(ctx_const):
    # gamma = x, xi = x - z: Psi(xi, eta) = xi + eta, gradient (1, 1).
    grad = transformed_cost_gradient(ctx_const, [0.3], [0.8])
    np.testing.assert_allclose(grad, [1.0, 1.0], atol=1e-10)


def test_cost_gradient_through_the_map_scaling(ctx_lin):
    # gamma = x, x = xi * exp(eta): gradient (exp(eta), xi * exp(eta)).
    xi, eta = 1.25, 0.7
    grad = transformed_cost_gradient(ctx_lin, [xi], [eta])
    np.testing.assert_allclose(
        grad, [math.exp(eta), xi * math.exp(eta)], atol=1e-9)


def test_near_singular_jacobian_is_guarded(ctx_lin):
    # For g = x the map contracts by exp(-eta); far outside U that
    # drops below the conditioning guard and the solve must refuse.
    with pytest.raises(TransformError):
        transformed_cost_gradient(ctx_lin, [1e-10], [40.0])


def _const_run(s_const, ctx_const, step=0.01):
    u = piecewise_constant([0.0, 0.5, 1.0], [[0.0], [-2.0]])
    a = constant_ordinary(1.0, [-1.0])
    traj = integrate_impulsive(s_const, ctx_const, u, a, step=step)
    arc = solve_transformed_adjoint(s_const, ctx_const, traj)
    return traj, arc


def test_shift_costate_is_constant(s_const, ctx_const):
    traj, arc = _const_run(s_const, ctx_const)
    np.testing.assert_allclose(arc.pi1, 1.0, atol=1e-12)
    np.testing.assert_allclose(arc.pi2, 1.0, atol=1e-12)
    pull_back_adjoint(s_const, ctx_const, arc, traj)
    np.testing.assert_allclose(arc.p1_left, 1.0, atol=1e-12)
    np.testing.assert_allclose(arc.p1_right, 1.0, atol=1e-12)
    np.testing.assert_allclose(arc.p2_left, 0.0, atol=1e-12)
    np.testing.assert_allclose(arc.p2_right, 0.0, atol=1e-12)


def test_scaling_costate_closed_form(s_lin, ctx_lin):
    # continuous u ramping 0 -> 1, zero drift: pi is frozen at its
    # terminal value (e, e); pull-back gives p1 = exp(1 - u(t)), p2 = 0.
    u = piecewise_linear([0.0, 0.5, 1.0], [[0.0], [1.0], [1.0]])
    a = constant_ordinary(1.0, [0.0])
    traj = integrate_impulsive(s_lin, ctx_lin, u, a, step=0.005)
    arc = solve_transformed_adjoint(s_lin, ctx_lin, traj)
    e = math.e
    np.testing.assert_allclose(arc.pi1[:, 0], e, atol=1e-9)
    np.testing.assert_allclose(arc.pi2[:, 0], e, atol=1e-9)
    pull_back_adjoint(s_lin, ctx_lin, arc, traj)
    expected = np.exp(1.0 - traj.u_right[:, 0])
    np.testing.assert_allclose(arc.p1_right[:, 0], expected, atol=1e-8)
    np.testing.assert_allclose(arc.p2_right[:, 0], 0.0, atol=1e-8)


def test_pull_back_matches_direct_original_sweep(s_lin, ctx_lin):
    u = piecewise_linear([0.0, 0.5, 1.0], [[0.0], [1.0], [1.0]])
    a = constant_ordinary(1.0, [0.5])
    traj = integrate_impulsive(s_lin, ctx_lin, u, a, step=0.005)
    arc = solve_transformed_adjoint(s_lin, ctx_lin, traj)
    pull_back_adjoint(s_lin, ctx_lin, arc, traj)
    direct = solve_original_adjoint(s_lin, ctx_lin, traj)
    gap = max(
        np.abs(arc.p1_right - direct[:, :1]).max(),
        np.abs(arc.p2_right - direct[:, 1:]).max(),
    )
    assert gap <= 1e-5


def test_original_sweep_rejects_jumpy_controls(s_const, ctx_const):
    traj, _ = _const_run(s_const, ctx_const, step=0.05)
    with pytest.raises(ValidationError):
        solve_original_adjoint(s_const, ctx_const, traj)


def test_pull_back_demands_matching_grids(s_const, ctx_const):
    traj, arc = _const_run(s_const, ctx_const, step=0.05)
    other, _ = _const_run(s_const, ctx_const, step=0.04)
    with pytest.raises(ValidationError):
        pull_back_adjoint(s_const, ctx_const, arc, other)


def test_terminal_anchor_flags_corrupted_costates(s_const, ctx_const):
    traj, arc = _const_run(s_const, ctx_const, step=0.05)
    arc.pi1 = arc.pi1 + 0.1
    with pytest.raises(TransformError):
        pull_back_adjoint(s_const, ctx_const, arc, traj)


def test_lifted_audit_passes_diagonal_system(s_comm2):
    report = audit_lifted_commutativity(s_comm2, count=50)
    assert report.passed
    assert len(report.pairs) == 1
    assert report.pairs[0].max_norm <= 1e-12
    assert report.pairs[0].checked == 50


def test_lifted_audit_flags_shear_system(s_noncomm):
    report = audit_lifted_commutativity(s_noncomm, count=50)
    assert not report.passed
    # the lifted bracket inherits the base bracket's unit displacement
    assert abs(report.pairs[0].max_norm - 1.0) <= 0.05
    doc = report.to_json_dict()
    assert doc["check"] == "lifted_commutativity"
    assert doc["pass"] is False


def test_lifted_audit_accepts_explicit_sample_points(s_comm2):
    pts = np.tile([1.0, 1.0, 0.2, -0.3, 0.5, 0.5], (4, 1))
    report = audit_lifted_commutativity(s_comm2, samples=pts)
    assert report.passed
    assert report.pairs[0].checked == 4


def test_single_channel_lifted_audit_is_vacuous(s_const):
    report = audit_lifted_commutativity(s_const, count=10)
    assert report.passed
    assert report.pairs == []
