"""Straightening map: closed forms, Jacobians, round trips, residual audit."""

import math

import numpy as np
import pytest

from flowbox import (
    DomainError,
    TransformContext,
    ValidationError,
    load_system,
    straighten,
    straighten_jacobian,
    straighten_many,
    transformed_drift,
    transport_drift,
    unstraighten,
    unstraighten_many,
    verify_flowbox,
)
from flowbox.sampling import halton, map_to_box

from conftest import S_NONCOMM


def test_shift_system_straightens_by_subtraction(ctx_const):
    # g = 1: the flow of -z*ghat moves x to x - z, so xi = x - z.
    out = straighten(ctx_const, [1.7], [0.4])
    np.testing.assert_allclose(out, [1.3, 0.4], atol=1e-12)
    J = straighten_jacobian(ctx_const, [1.7], [0.4])
    np.testing.assert_allclose(J, [[1.0, -1.0], [0.0, 1.0]], atol=1e-10)


def test_scaling_system_straightens_by_exponential(ctx_lin):
    # g = x: xi = x * exp(-z); at x = 2, z = ln 2 that is exactly 1.
    out = straighten(ctx_lin, [2.0], [math.log(2.0)])
    np.testing.assert_allclose(out, [1.0, math.log(2.0)], atol=1e-10)
    back = unstraighten(ctx_lin, [1.0], [math.log(2.0)])
    np.testing.assert_allclose(back, [2.0, math.log(2.0)], atol=1e-10)


def test_jacobian_matches_closed_form_and_finite_differences(ctx_lin):
    x, z = 1.5, 0.7
    J = straighten_jacobian(ctx_lin, [x], [z])
    expected = [[math.exp(-z), -x * math.exp(-z)], [0.0, 1.0]]
    np.testing.assert_allclose(J, expected, atol=1e-9)
    # bottom row is exact by construction, not merely accurate
    np.testing.assert_array_equal(J[1], [0.0, 1.0])
    h = 1e-6
    fd = np.empty((1, 2))
    for c, (dx, dz) in enumerate([(h, 0.0), (0.0, h)]):
        up = straighten(ctx_lin, [x + dx], [z + dz])[0]
        dn = straighten(ctx_lin, [x - dx], [z - dz])[0]
        fd[0, c] = (up - dn) / (2 * h)
    np.testing.assert_allclose(J[:1], fd, atol=1e-5)


def test_round_trip_on_random_box(ctx_comm2):
    spec = ctx_comm2.system
    lo = np.concatenate([spec.x0 - 1.0, spec.U[:, 0]])
    hi = np.concatenate([spec.x0 + 1.0, spec.U[:, 1]])
    pts = map_to_box(halton(100, 4), lo, hi)
    xi, status = straighten_many(ctx_comm2, pts[:, :2], pts[:, 2:])
    assert status.max() == 0
    back, status = unstraighten_many(ctx_comm2, xi[:, :2], pts[:, 2:])
    assert status.max() == 0
    assert np.abs(back[:, :2] - pts[:, :2]).max() <= 1e-8


def test_more_flow_steps_refine_the_map(s_lin):
    # Richardson check: quadrupling steps must not move the answer by
    # more than the coarse grid's own error scale.
    coarse = TransformContext(s_lin, flow_steps=50)
    fine = TransformContext(s_lin, flow_steps=200)
    x, z = [2.0], [1.0]
    exact = 2.0 * math.exp(-1.0)
    err_coarse = abs(straighten(coarse, x, z)[0] - exact)
    err_fine = abs(straighten(fine, x, z)[0] - exact)
    assert err_coarse > 0.0
    assert err_fine <= err_coarse
    assert err_fine <= 1e-10


def test_transformed_drift_scaling_closed_form(ctx_lin):
    # F(xi, eta, a) = exp(-eta) * a for the scaling system.
    val = transformed_drift(ctx_lin, [1.25], [0.6], [0.8])
    np.testing.assert_allclose(val, [math.exp(-0.6) * 0.8], atol=1e-9)


def test_transport_matches_closed_form(ctx_lin):
    # Carrying the unit drift from level ln 2 back to level 0 for g = x
    # scales it by exp(-(u_to - u_from)); at x = 1 the value is 1/2.
    val = transport_drift(ctx_lin, [1.0], [0.0], [math.log(2.0)], [1.0])
    np.testing.assert_allclose(val, [0.5], atol=1e-9)


def test_transport_at_equal_controls_is_identity(ctx_const):
    val = transport_drift(ctx_const, [0.3], [0.2], [0.2], [0.7])
    np.testing.assert_allclose(val, [0.7], atol=1e-12)


def test_flow_steps_floor_is_enforced(s_const):
    with pytest.raises(ValidationError):
        TransformContext(s_const, flow_steps=5)


def test_verify_flowbox_passes_commuting_systems(ctx_const, ctx_lin,
                                                 ctx_comm2):
    for ctx in (ctx_const, ctx_lin, ctx_comm2):
        report = verify_flowbox(ctx, samples=100, tol=1e-6)
        assert report.passed
        assert report.checked == 100
        assert report.skipped == 0


def test_verify_flowbox_flags_shear_system():
    ctx = TransformContext(load_system(S_NONCOMM))
    report = verify_flowbox(ctx, samples=100, tol=1e-6)
    assert not report.passed
    assert report.max_residual > 0.1
    doc = report.to_json_dict()
    assert doc["check"] == "flowbox"
    assert doc["pass"] is False


def test_flow_leaving_the_domain_is_reported():
    # exp(x) reaches its blow-up time well inside the unit flow interval.
    spec = load_system({
        "n": 1, "m": 1, "l": 1, "T": 1.0,
        "x0": [1.0], "u0": [0.0],
        "U": [[-4.0, 4.0]], "A": [[-1.0, 1.0]],
        "f": ["a1"], "g": [["exp(x1)"]], "gamma": "x1",
    })
    ctx = TransformContext(spec)
    with pytest.raises(DomainError):
        straighten(ctx, [1.0], [-3.0])
    _, status = straighten_many(ctx, [[1.0]], [[-3.0]])
    assert status[0] != 0
