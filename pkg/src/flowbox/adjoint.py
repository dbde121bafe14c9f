"""Costate propagation and pull-back to the original coordinates.

The production route works entirely in straightened coordinates: the
transformed cost gradient seeds a linear backward sweep driven by
finite-difference Jacobians of the transformed drift, and the original
costate is recovered at every node by multiplying with the straightening
Jacobian -- two-sided at control jumps, where the original costate (like
the state) genuinely jumps.

The direct backward integration of the original augmented adjoint is
also provided, but only for continuous controls: it is the independent
oracle the transformed route is tested against.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, TransformError, ValidationError
from .expr import compile_bank
from .sampling import halton, map_to_box
from .system import cost_gradient_values, lie_bracket, run_bank
from .transform import (straighten_jacobian, straighten_jacobian_many,
                        transformed_drift_many, unstraighten)

_COND_GUARD = 1e12


@dataclass(eq=False)
class AdjointArc:
    """Transformed costate on a trajectory grid, plus its pull-back."""

    t: np.ndarray
    pi1: np.ndarray        # (N, n)
    pi2: np.ndarray        # (N, m)
    p1_left: np.ndarray = None
    p1_right: np.ndarray = None
    p2_left: np.ndarray = None
    p2_right: np.ndarray = None

    @property
    def pi(self):
        return np.hstack([self.pi1, self.pi2])


def transformed_cost_gradient(ctx, xi, eta):
    """Gradient of the cost seen through the inverse straightening map.

    Computed as the original cost gradient at the reconstructed point,
    composed with the inverse of the straightening Jacobian there.
    """
    spec = ctx.system
    point = unstraighten(ctx, xi, eta)
    x, z = point[:spec.n], point[spec.n:]
    grad, status = cost_gradient_values(spec, x[None], z[None])
    if status[0] != 0:
        raise DomainError("cost gradient undefined at the reconstructed "
                          "point")
    D = straighten_jacobian(ctx, x, z)
    if np.linalg.cond(D) > _COND_GUARD:
        raise TransformError("straightening Jacobian numerically singular")
    return np.linalg.solve(D.T, grad[0])


def _drift_jacobians(ctx, xi_pts, eta_pts, a_pts, delta=1e-6):
    """Central finite differences of the transformed drift, batched.

    Returns (P, n, n+m) arrays of d(drift)/d(xi, eta); raises on domain
    errors -- the costate sweep cannot skip points.
    """
    spec = ctx.system
    n, m = spec.n, spec.m
    N = n + m
    P = xi_pts.shape[0]
    base = np.hstack([xi_pts, eta_pts])
    steps = delta * (1.0 + np.abs(base))          # (P, N)
    stacked = np.repeat(base[None], 2 * N, axis=0).reshape(2 * N * P, N)
    for c in range(N):
        stacked[2 * c * P:(2 * c + 1) * P, c] += steps[:, c]
        stacked[(2 * c + 1) * P:(2 * c + 2) * P, c] -= steps[:, c]
    a_rep = np.tile(a_pts, (2 * N, 1))
    drift, _, status = transformed_drift_many(
        ctx, stacked[:, :n], stacked[:, n:], a_rep)
    if status.max() != 0:
        raise DomainError("transformed drift undefined while building "
                          "adjoint coefficients")
    drift = drift.reshape(2 * N, P, n)
    grad = np.empty((P, n, N))
    for c in range(N):
        grad[:, :, c] = ((drift[2 * c] - drift[2 * c + 1]).T
                         / (2.0 * steps[:, c])).T
    return grad


def solve_transformed_adjoint(spec, ctx, traj):
    """Backward sweep of the transformed costate on the trajectory grid.

    Terminal value is the transformed cost gradient at the final state;
    the linear dynamics uses finite-difference Jacobians of the
    transformed drift with the same one-sided control values the forward
    pass used.
    """
    t = traj.t
    C = len(t) - 1
    n, m = spec.n, spec.m
    ustart, uend, acell = traj.cell_controls()
    umid = 0.5 * (ustart + uend)
    xi_s = traj.xi[:-1]
    xi_e = traj.xi[1:]
    xi_m = 0.5 * (xi_s + xi_e)
    xi_all = np.vstack([xi_s, xi_m, xi_e])
    u_all = np.vstack([ustart, umid, uend])
    a_all = np.vstack([acell, acell, acell])
    grads = _drift_jacobians(ctx, xi_all, u_all, a_all)
    g_start, g_mid, g_end = grads[:C], grads[C:2 * C], grads[2 * C:]

    pi = np.empty((C + 1, n + m))
    eta_T = traj.u_point[-1]
    pi[C] = transformed_cost_gradient(ctx, traj.xi[-1], eta_T)

    def rhs(vec, grad):
        return -vec[:n] @ grad

    cur = pi[C]
    for c in range(C - 1, -1, -1):
        h = t[c + 1] - t[c]
        k1 = rhs(cur, g_end[c])
        k2 = rhs(cur - 0.5 * h * k1, g_mid[c])
        k3 = rhs(cur - 0.5 * h * k2, g_mid[c])
        k4 = rhs(cur - h * k3, g_start[c])
        cur = cur - (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        pi[c] = cur
    return AdjointArc(t, pi[:, :n].copy(), pi[:, n:].copy())


def pull_back_adjoint(spec, ctx, arc, traj):
    """Fill the original costate p = pi . dphi at every node, two-sided.

    Also asserts the terminal consistency p(T) = grad of the cost at the
    final (pointwise) state, which is the transform-independent anchor.
    """
    if len(arc.t) != len(traj.t) or np.abs(arc.t - traj.t).max() > 0:
        raise ValidationError("adjoint arc and trajectory grids differ")
    n = spec.n
    N = len(traj.t)
    x_sides = np.vstack([traj.x_left, traj.x_right])
    u_sides = np.vstack([traj.u_left, traj.u_right])
    D, status = straighten_jacobian_many(ctx, x_sides, u_sides)
    if status.max() != 0:
        raise DomainError("straightening Jacobian undefined at a node")
    pi = np.vstack([arc.pi, arc.pi])
    p = np.einsum("bi,bij->bj", pi, D)
    arc.p1_left, arc.p2_left = p[:N, :n], p[:N, n:]
    arc.p1_right, arc.p2_right = p[N:, :n], p[N:, n:]

    D_pt, status = straighten_jacobian_many(ctx, traj.x_point[-1],
                                            traj.u_point[-1])
    if status.max() != 0:
        raise DomainError("straightening Jacobian undefined at T")
    p_T = arc.pi[-1] @ D_pt[0]
    grad, gstatus = cost_gradient_values(spec, traj.x_point[-1][None],
                                         traj.u_point[-1][None])
    if gstatus[0] != 0:
        raise DomainError("cost gradient undefined at the final state")
    gap = np.abs(p_T - grad[0]).max()
    if gap > 1e-7:
        raise TransformError(
            f"terminal costate mismatch {gap:.3e} against the cost "
            "gradient (broken transform?)")
    return arc


def solve_original_adjoint(spec, ctx, traj):
    """Direct backward sweep of the original augmented adjoint.

    Only valid for continuous controls (the coefficient contains the
    control rate); used as the independent oracle for the pull-back
    route.
    """
    if traj.jump_mask().any():
        raise ValidationError("the original adjoint needs a continuous "
                              "control")
    t = traj.t
    n, m, N = spec.n, spec.m, spec.n + spec.m
    C = len(t) - 1
    ustart, uend, acell = traj.cell_controls()
    umid = 0.5 * (ustart + uend)
    udot = (uend - ustart) / np.diff(t)[:, None]
    x_s = traj.x_point[:-1]
    x_e = traj.x_point[1:]
    x_m = 0.5 * (x_s + x_e)

    def coeff(x, u, a, ud):
        """Top n rows of the augmented field's (x,u)-Jacobian."""
        env = np.hstack([x, u, a])
        dfv, s1 = run_bank(spec.drift_jacobian_bank, env)
        dgv, s2 = run_bank(spec.impulse_jacobian_bank, np.hstack([x, u]))
        if max(s1.max(), s2.max()) != 0:
            raise DomainError("field Jacobian undefined along the "
                              "trajectory")
        J = dfv.reshape(-1, n, N)
        J = J + np.einsum("bk,bkin->bin",
                          ud, dgv.reshape(-1, m, n, N))
        return J

    J_s = coeff(x_s, ustart, acell, udot)
    J_m = coeff(x_m, umid, acell, udot)
    J_e = coeff(x_e, uend, acell, udot)

    grad, gstatus = cost_gradient_values(spec, traj.x_point[-1][None],
                                         traj.u_point[-1][None])
    if gstatus[0] != 0:
        raise DomainError("cost gradient undefined at the final state")
    p = np.empty((C + 1, N))
    p[C] = grad[0]
    cur = p[C]
    for c in range(C - 1, -1, -1):
        h = t[c + 1] - t[c]
        k1 = -cur[:n] @ J_e[c]
        k2 = -(cur - 0.5 * h * k1)[:n] @ J_m[c]
        k3 = -(cur - 0.5 * h * k2)[:n] @ J_m[c]
        k4 = -(cur - h * k3)[:n] @ J_s[c]
        cur = cur - (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        p[c] = cur
    return p


# --- lifted Hamiltonian fields audit --------------------------------------

@dataclass
class LiftedPairResult:
    fields: tuple
    max_norm: float
    checked: int
    skipped: int


@dataclass
class LiftedReport:
    passed: bool
    tol: float
    samples: int
    pairs: list

    def to_json_dict(self):
        return {
            "check": "lifted_commutativity",
            "pass": bool(self.passed),
            "tol": self.tol,
            "samples": self.samples,
            "pairs": [{"fields": list(p.fields), "max_norm": p.max_norm,
                       "checked": p.checked, "skipped": p.skipped}
                      for p in self.pairs],
        }


def audit_lifted_commutativity(spec, samples=None, count=50, tol=1e-8,
                               box_radius=1.0):
    """Bracket the costate-lifted impulse fields at sample points.

    Each impulse field lifts to state block g and costate block
    -(grad g)^T w; commuting base fields must lift to commuting fields,
    which this audit checks numerically (state block via the symbolic
    bracket, costate block via first/second derivative contractions).
    """
    n, m = spec.n, spec.m
    N = n + m
    if samples is None:
        lo = np.concatenate([spec.x0 - box_radius, spec.U[:, 0],
                             -np.ones(N)])
        hi = np.concatenate([spec.x0 + box_radius, spec.U[:, 1],
                             np.ones(N)])
        samples = map_to_box(halton(count, 2 * N), lo, hi)
    else:
        samples = np.atleast_2d(np.asarray(samples, dtype=float))
    B = samples.shape[0]
    y = samples[:, :N]
    w = samples[:, N:]

    gvals, s1 = run_bank(spec.impulse_bank, y)
    jvals, s2 = run_bank(spec.impulse_jacobian_bank, y)
    hvals, s3 = run_bank(spec.impulse_hessian_bank, y)
    status = np.maximum(np.maximum(s1, s2), s3)
    ok = status == 0
    gvals = gvals.reshape(B, m, n)
    jvals = jvals.reshape(B, m, n, N)
    hvals = hvals.reshape(B, m, n, N, N)

    def aug_values(i):
        out = np.zeros((B, N))
        out[:, :n] = gvals[:, i]
        out[:, n + i] = 1.0
        return out

    pairs = []
    all_pass = True
    for i in range(m):
        for j in range(i + 1, m):
            bracket = lie_bracket(spec, spec.aug_impulse(i),
                                  spec.aug_impulse(j))
            bank = compile_bank(list(bracket.components), spec.state_names)
            state_block, s4 = run_bank(bank, y)
            row_ok = ok & (s4 == 0)
            a_val, b_val = aug_values(i), aug_values(j)
            Ja, Jb = jvals[:, i], jvals[:, j]     # (B, n, N)
            Ha, Hb = hvals[:, i], hvals[:, j]     # (B, n, N, N)
            wt = w[:, :n]
            costate = (
                -np.einsum("blks,bl,bs->bk", Hb, wt, a_val)
                + np.einsum("blks,bl,bs->bk", Ha, wt, b_val)
                + np.einsum("blk,brl,br->bk", Jb, Ja[:, :, :n], wt)
                - np.einsum("blk,brl,br->bk", Ja, Jb[:, :, :n], wt)
            )
            full = np.hstack([state_block, costate])
            if row_ok.any():
                norms = np.abs(full[row_ok]).max(axis=1)
                max_norm = float(norms.max())
            else:
                max_norm = float("nan")
            checked = int(row_ok.sum())
            skipped = B - checked
            pairs.append(LiftedPairResult((i + 1, j + 1), max_norm,
                                          checked, skipped))
            if not (checked and max_norm <= tol):
                all_pass = False
    return LiftedReport(all_pass, tol, B, pairs)
