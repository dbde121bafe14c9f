"""The straightening change of coordinates and its derived maps.

For a system whose augmented impulse fields commute, flowing backwards
along them for unit time with coefficients frozen at the control value
defines new coordinates in which every impulse field becomes the
constant unit vector of its control slot.  In those coordinates an
impulsive run reduces to a classical one: only the (transformed) drift
moves the state, and control jumps cost nothing.

All maps here are computed by fixed-step RK4 on the defining flows --
no closed forms are assumed.  Scalar entry points raise on trouble;
the ``*_many`` batch variants return a status vector instead so sweep
code can skip bad points and keep going.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DomainError, TransformError, ValidationError
from .sampling import halton, map_to_box
from .system import impulse_values, run_bank

_KEY_LIMIT = 9.0e17  # quantized coordinates beyond this skip the cache


@dataclass(eq=False)
class TransformContext:
    """Owns the flow discretization and the point/Jacobian memo cache."""

    system: object
    flow_steps: int = 200
    cache_limit: int = 200_000
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.flow_steps < 10:
            raise ValidationError("flow_steps must be at least 10")

    def _memo_key(self, tag, vec):
        quantized = np.round(vec * 1e12)
        if not np.all(np.abs(quantized) < _KEY_LIMIT):
            return None
        return (tag,) + tuple(int(q) for q in quantized)

    def _memo_get(self, key):
        if key is None:
            return None
        hit = self._cache.get(key)
        return None if hit is None else hit.copy()

    def _memo_put(self, key, value):
        if key is None:
            return
        if len(self._cache) >= self.cache_limit:
            self._cache.clear()
        self._cache[key] = value.copy()


def _as_batch(*arrays):
    rows = [np.atleast_2d(np.asarray(a, dtype=float)) for a in arrays]
    return np.ascontiguousarray(np.hstack(rows))


def _run_flow(ctx, y0, coeff):
    spec = ctx.system
    B = y0.shape[0]
    y1 = np.empty_like(y0)
    status = np.zeros(B, dtype=np.int64)
    bank = spec.impulse_bank
    kernels.flow(bank.code, bank.starts, bank.consts, spec.n, spec.m,
                 y0, np.ascontiguousarray(coeff), ctx.flow_steps, y1, status)
    return y1, status


def _run_flow_jacobian(ctx, y0, coeff, param_sign):
    spec = ctx.system
    B = y0.shape[0]
    N = spec.n + spec.m
    y1 = np.empty_like(y0)
    M = np.empty((B, N, N))
    status = np.zeros(B, dtype=np.int64)
    bank = spec.impulse_bank
    dbank = spec.impulse_jacobian_bank
    kernels.flow_jacobian(bank.code, bank.starts, bank.consts,
                          dbank.code, dbank.starts, dbank.consts,
                          spec.n, spec.m, y0, np.ascontiguousarray(coeff),
                          param_sign, ctx.flow_steps, y1, M, status)
    return y1, M, status


def _run_flow_pull(ctx, y0, coeff):
    spec = ctx.system
    B = y0.shape[0]
    N = spec.n + spec.m
    y1 = np.empty_like(y0)
    K = np.empty((B, N, N))
    status = np.zeros(B, dtype=np.int64)
    bank = spec.impulse_bank
    dbank = spec.impulse_jacobian_bank
    kernels.flow_pull(bank.code, bank.starts, bank.consts,
                      dbank.code, dbank.starts, dbank.consts,
                      spec.n, spec.m, y0, np.ascontiguousarray(coeff),
                      ctx.flow_steps, y1, K, status)
    return y1, K, status


def _run_flow_push(ctx, y0, coeff, v0):
    spec = ctx.system
    B = y0.shape[0]
    y1 = np.empty_like(y0)
    v1 = np.empty_like(y0)
    status = np.zeros(B, dtype=np.int64)
    bank = spec.impulse_bank
    dbank = spec.impulse_jacobian_bank
    kernels.flow_push(bank.code, bank.starts, bank.consts,
                      dbank.code, dbank.starts, dbank.consts,
                      spec.n, spec.m, y0, np.ascontiguousarray(coeff),
                      np.ascontiguousarray(v0), ctx.flow_steps, y1, v1,
                      status)
    return y1, v1, status


def _check_settled(ctx, y1, reference, what):
    """The control block of a straightening flow is integrated exactly
    (constant velocity), so any visible residue means a broken setup."""
    scale = np.maximum(1.0, np.abs(reference).max(axis=-1))
    resid = np.abs(y1[..., ctx.system.n:] - reference).max(axis=-1)
    worst = float(np.max(resid / scale)) if resid.size else 0.0
    if worst > 1e-10:
        raise TransformError(f"{what}: control block residue {worst:.3e}")


# --- batch maps ---------------------------------------------------------

def straighten_many(ctx, x, z):
    """Batched straightening map; returns ((B, n+m) of (xi, z), status)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    z = np.atleast_2d(np.asarray(z, dtype=float))
    y0 = _as_batch(x, z)
    y1, status = _run_flow(ctx, y0, -z)
    ok = status == 0
    if ok.any():
        _check_settled(ctx, y1[ok], np.zeros_like(z[ok]), "straighten")
    out = np.hstack([y1[:, :ctx.system.n], z])
    return out, status


def unstraighten_many(ctx, xi, eta):
    """Batched inverse map; returns ((B, n+m) of (x, eta), status)."""
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    eta = np.atleast_2d(np.asarray(eta, dtype=float))
    y0 = _as_batch(xi, np.zeros_like(eta))
    y1, status = _run_flow(ctx, y0, eta)
    ok = status == 0
    if ok.any():
        _check_settled(ctx, y1[ok], eta[ok], "unstraighten")
    out = np.hstack([y1[:, :ctx.system.n], eta])
    return out, status


def transformed_drift_many(ctx, xi, eta, a):
    """Batched transformed drift.

    Returns (drift (B, n), x (B, n), status).  The x column is the
    original-coordinate point the flow passed through, which sweep code
    usually wants as well.
    """
    spec = ctx.system
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    eta = np.atleast_2d(np.asarray(eta, dtype=float))
    a = np.atleast_2d(np.asarray(a, dtype=float))
    y0 = _as_batch(xi, np.zeros_like(eta))
    y1, K, status = _run_flow_pull(ctx, y0, eta)
    # bottom rows of K are (0 | I) identically; that is what makes the
    # control block of the transformed field vanish exactly
    if K.size and not (np.all(K[:, spec.n:, :spec.n] == 0.0)):
        raise TransformError("inverse differential lost its unit block")
    env = np.hstack([y1[:, :spec.n], eta, a])
    fvals, fstatus = run_bank(spec.drift_bank, env)
    status = np.where(status != 0, status, fstatus)
    drift = np.einsum("bij,bj->bi", K[:, :spec.n, :spec.n], fvals)
    return drift, y1[:, :spec.n], status


def transport_drift_many(ctx, x, u_from, u_to, a):
    """Batched drift transport between control levels.

    Moves the evaluation point along the straightening flows from level
    ``u_from`` to level ``u_to``, evaluates the drift there, and carries
    the vector back with the flow differential.  Returns ((B, n), status).
    """
    spec = ctx.system
    x = np.atleast_2d(np.asarray(x, dtype=float))
    u_from = np.atleast_2d(np.asarray(u_from, dtype=float))
    u_to = np.atleast_2d(np.asarray(u_to, dtype=float))
    a = np.atleast_2d(np.asarray(a, dtype=float))
    delta = u_from - u_to
    y1, status1 = _run_flow(ctx, _as_batch(x, delta), -delta)
    x_shift = y1[:, :spec.n]
    env = np.hstack([x_shift, u_to, a])
    fvals, status2 = run_bank(spec.drift_bank, env)
    back = u_to - u_from
    v0 = np.hstack([fvals, np.zeros_like(u_from)])
    _, v1, status3 = _run_flow_push(ctx, _as_batch(x_shift, back), -back, v0)
    status = np.where(status1 != 0, status1,
                      np.where(status2 != 0, status2, status3))
    return v1[:, :spec.n], status


def straighten_jacobian_many(ctx, x, z):
    """Batched Jacobian of (x, z) -> (xi, z); returns ((B, N, N), status)."""
    spec = ctx.system
    x = np.atleast_2d(np.asarray(x, dtype=float))
    z = np.atleast_2d(np.asarray(z, dtype=float))
    N = spec.n + spec.m
    _, M, status = _run_flow_jacobian(ctx, _as_batch(x, z), -z, -1.0)
    out = M.copy()
    out[:, spec.n:, :] = 0.0
    for k in range(spec.m):
        out[:, spec.n + k, spec.n + k] = 1.0
    return out, status


# --- scalar entry points (memoized) --------------------------------------

def _one(batch_result):
    out, status = batch_result
    if status[0] != 0:
        raise DomainError("field evaluation failed along a straightening "
                          "flow")
    return out[0]


def straighten(ctx, x, z):
    """Map an original point (x, z) to straightened coordinates (xi, z)."""
    key = ctx._memo_key("s", np.concatenate([np.atleast_1d(x),
                                             np.atleast_1d(z)]))
    hit = ctx._memo_get(key)
    if hit is not None:
        return hit
    out = _one(straighten_many(ctx, x, z))
    ctx._memo_put(key, out)
    return out


def unstraighten(ctx, xi, eta):
    """Map straightened coordinates (xi, eta) back to (x, eta)."""
    key = ctx._memo_key("u", np.concatenate([np.atleast_1d(xi),
                                             np.atleast_1d(eta)]))
    hit = ctx._memo_get(key)
    if hit is not None:
        return hit
    out = _one(unstraighten_many(ctx, xi, eta))
    ctx._memo_put(key, out)
    return out


def straighten_jacobian(ctx, x, z):
    """Full derivative of the straightening map at (x, z)."""
    key = ctx._memo_key("j", np.concatenate([np.atleast_1d(x),
                                             np.atleast_1d(z)]))
    hit = ctx._memo_get(key)
    if hit is not None:
        return hit
    out, status = straighten_jacobian_many(ctx, x, z)
    if status[0] != 0:
        raise DomainError("field evaluation failed along a straightening "
                          "flow")
    ctx._memo_put(key, out[0])
    return out[0]


def transformed_drift(ctx, xi, eta, a):
    """The classical right-hand side in straightened coordinates."""
    drift, _, status = transformed_drift_many(ctx, xi, eta, a)
    if status[0] != 0:
        raise DomainError("drift or impulse evaluation failed in "
                          "transformed_drift")
    return drift[0]


def transport_drift(ctx, x, u_from, u_to, a):
    """Drift at control level u_to carried back to level u_from."""
    out, status = transport_drift_many(ctx, x, u_from, u_to, a)
    if status[0] != 0:
        raise DomainError("field evaluation failed in transport_drift")
    return out[0]


# --- straightening audit --------------------------------------------------

@dataclass
class FlowboxReport:
    """Worst-case straightening residual over a sample sweep."""

    passed: bool
    tol: float
    samples: int
    max_residual: float
    argmax_point: np.ndarray
    argmax_field: int
    checked: int
    skipped: int

    def to_json_dict(self):
        return {
            "check": "flowbox",
            "pass": bool(self.passed),
            "tol": self.tol,
            "samples": self.samples,
            "max_residual": self.max_residual,
            "argmax_point": [float(v) for v in self.argmax_point],
            "argmax_field": self.argmax_field,
            "checked": self.checked,
            "skipped": self.skipped,
        }


def verify_flowbox(ctx, samples=100, tol=1e-6, box_radius=1.0, points=None):
    """Check that each impulse field straightens to its unit vector.

    At sample points (x, z) the pushforward of ghat_k through the
    straightening map must equal the unit vector of control slot k; the
    report carries the worst residual found.  Points where the flow hits
    a domain error are skipped and counted.
    """
    spec = ctx.system
    N = spec.n + spec.m
    if points is None:
        lo = np.concatenate([spec.x0 - box_radius, spec.U[:, 0]])
        hi = np.concatenate([spec.x0 + box_radius, spec.U[:, 1]])
        points = map_to_box(halton(samples, N), lo, hi)
    else:
        points = np.atleast_2d(np.asarray(points, dtype=float))
    B = points.shape[0]
    x = points[:, :spec.n]
    z = points[:, spec.n:]
    _, M, status = _run_flow_jacobian(ctx, points.copy(), -z, -1.0)
    gvals, gstatus = impulse_values(spec, x, z)
    status = np.where(status != 0, status, gstatus)
    ok = status == 0
    max_resid = -1.0
    arg_point = points[0]
    arg_field = 0
    for k in range(spec.m):
        ghat = np.concatenate([gvals[:, k, :],
                               np.eye(spec.m)[k][None, :].repeat(B, axis=0)],
                              axis=1)
        # the pushforward's control block is exactly e_k by construction,
        # so the residual lives in the top n rows only
        top = np.einsum("bij,bj->bi", M[:, :spec.n, :], ghat)
        resid = np.abs(top).max(axis=1)
        resid[~ok] = -1.0
        worst = int(np.argmax(resid))
        if resid[worst] > max_resid:
            max_resid = float(resid[worst])
            arg_point = points[worst]
            arg_field = k + 1
    checked = int(ok.sum())
    skipped = B - checked
    passed = checked > 0 and max_resid <= tol
    return FlowboxReport(passed, tol, B, max_resid, arg_point, arg_field,
                         checked, skipped)
