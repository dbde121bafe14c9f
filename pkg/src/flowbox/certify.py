"""Machine-checkable necessary conditions for a candidate control pair.

Every checker produces plain condition records: a margin (worst slack
seen), the point achieving it, and how many probes were checked versus
skipped for admissibility or domain reasons.  `certify` runs the whole
battery in a fixed order on a freshly integrated candidate trajectory:

  H-MIN-U        Hamiltonian minimality over the joint (U x A) lattice,
  H-MIN-A        the ordinary-control-only sweep at the candidate u,
  TRANSPORT      the u-sweep re-derived in original coordinates through
                 the transport operator (must reproduce the transformed
                 sweep's margins),
  VARIATION-BV   monotone bounded-variation needle variations,
  NC-I           costate paired with each impulse field, requiring the
                 one-sided bump to stay admissible through T,
  NC-II          costate paired with [g_i, f] under pointwise one-sided
                 admissibility,
  NC-III-SYM     symmetry of Q_jk = p . [g_j, [g_k, f]] on the
                 two-sided admissible index set,
  NC-III-PSD     positivity of the Q quadratic form over unit
                 directions supported on that set.

All margins obey "pass iff margin >= -tol", except NC-III-SYM where the
margin is an asymmetry magnitude and passes iff it stays below tol.
Probes sit at cell midpoints, never at breakpoints, so one-sided values
are unambiguous.
"""

from dataclasses import dataclass

import numpy as np

from .adjoint import (_drift_jacobians, pull_back_adjoint,
                      solve_transformed_adjoint)
from .errors import (AdmissibilityError, FlowboxError, GridError,
                     TransformError, ValidationError)
from .expr import compile_bank
from .propagate import integrate_impulsive
from .sampling import unit_directions
from .signals import constant_variation, radon_integral
from .system import drift_values, impulse_values, lie_bracket, run_bank
from .transform import (straighten_jacobian_many, transformed_drift_many,
                        transport_drift_many, unstraighten_many)

_TRANSPORT_AGREE = 1e-5
_PAIRING_AGREE = 1e-6
_BRACKET_AGREE = 1e-6
_HESSIAN_AGREE = 1e-5


@dataclass
class CertifyOptions:
    """Tunable knobs for `certify`; defaults match the CLI."""

    step: float = None
    tol: float = 1e-6
    grid_u: int = 9
    grid_a: int = 9
    sigma0: float = 1e-6
    nc1_orientation: str = "derived"
    check_times: int = 200
    variation_times: tuple = (0.25, 0.5, 0.75)
    extra_directions: int = 16
    seed: int = 0


@dataclass
class ConditionRecord:
    condition: str
    passed: bool
    margin: float
    argmin: dict
    counts: dict
    notes: str = ""

    def to_json_dict(self):
        doc = {
            "condition": self.condition,
            "pass": bool(self.passed),
            "margin": None if self.margin is None else float(self.margin),
            "argmin": {k: (float(v) if np.isscalar(v) or isinstance(v, float)
                           else [float(c) for c in v])
                       for k, v in self.argmin.items()},
            "counts": {k: int(v) for k, v in self.counts.items()},
        }
        if self.notes:
            doc["notes"] = self.notes
        return doc


@dataclass
class CertificateReport:
    conditions: list
    overall_pass: bool
    tolerance: float
    options: CertifyOptions = None

    def to_json_dict(self):
        return {
            "overall_pass": bool(self.overall_pass),
            "tol": float(self.tolerance),
            "conditions": [r.to_json_dict() for r in self.conditions],
        }


# --- shared probe points ---------------------------------------------------

@dataclass(eq=False)
class CheckPoints:
    """Candidate data sampled at (subsampled) cell midpoints."""

    t: np.ndarray
    xi: np.ndarray
    u: np.ndarray
    a: np.ndarray
    x: np.ndarray
    pi1: np.ndarray
    pi2: np.ndarray
    p1: np.ndarray
    p2: np.ndarray

    @property
    def count(self):
        return len(self.t)


def build_check_points(spec, ctx, traj, arc, check_times=200):
    """Midpoint probes: interpolated state/costate, reconstructed x, p."""
    if len(arc.t) != len(traj.t) or np.abs(arc.t - traj.t).max() > 0:
        raise ValidationError("adjoint arc and trajectory grids differ")
    if check_times < 1:
        raise GridError("check_times must be at least 1")
    C = len(traj.t) - 1
    cells = np.arange(C)
    if C > check_times:
        cells = np.unique(np.round(
            np.linspace(0.0, C - 1, check_times)).astype(int))
    t = 0.5 * (traj.t[cells] + traj.t[cells + 1])
    xi = 0.5 * (traj.xi[cells] + traj.xi[cells + 1])
    ustart, uend, acell = traj.cell_controls()
    u = 0.5 * (ustart[cells] + uend[cells])
    a = acell[cells]
    pi1 = 0.5 * (arc.pi1[cells] + arc.pi1[cells + 1])
    pi2 = 0.5 * (arc.pi2[cells] + arc.pi2[cells + 1])
    pts, status = unstraighten_many(ctx, xi, u)
    if status.max() != 0:
        raise TransformError("state reconstruction failed at a probe time")
    x = pts[:, :spec.n]
    D, status = straighten_jacobian_many(ctx, x, u)
    if status.max() != 0:
        raise TransformError("straightening Jacobian failed at a probe "
                             "time")
    p = np.einsum("bi,bij->bj", np.hstack([pi1, pi2]), D)
    return CheckPoints(t, xi, u, a, x, pi1, pi2, p[:, :spec.n],
                       p[:, spec.n:])


def _box_grid(box, count):
    axes = [np.linspace(float(lo), float(hi), count) for lo, hi in box]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _vacuous(name, counts, why):
    return ConditionRecord(name, True, None, {}, counts, notes=why)


def _admissible_bumps(spec, pts, sigma0, sign):
    """(K, m) mask: u* + sign*sigma0*e_i stays inside the box U."""
    m = spec.m
    pert = pts.u[:, None, :] + sign * sigma0 * np.eye(m)[None, :, :]
    return ((pert >= spec.U[None, None, :, 0] - 1e-15)
            & (pert <= spec.U[None, None, :, 1] + 1e-15)).all(axis=2)


# --- Hamiltonian minimality ------------------------------------------------

def _hamiltonian_baseline(ctx, pts):
    drift, _, status = transformed_drift_many(ctx, pts.xi, pts.u, pts.a)
    if status.max() != 0:
        raise TransformError("transformed drift failed on the candidate "
                             "arc")
    return np.einsum("bi,bi->b", pts.pi1, drift)


def check_hamiltonian_min(spec, ctx, traj, arc, grid_u, grid_a, tol,
                          points=None, check_times=200):
    """H-MIN-U / H-MIN-A grid minimality of the transformed Hamiltonian.

    H-MIN-U sweeps the full (U x A) lattice against the candidate pair;
    H-MIN-A sweeps the ordinary control alone with u held at the
    candidate value.
    """
    if grid_u < 2 or grid_a < 2:
        raise GridError("hamiltonian grids need at least 2 points per "
                        "axis")
    pts = points if points is not None else build_check_points(
        spec, ctx, traj, arc, check_times)
    K = pts.count
    H0 = _hamiltonian_baseline(ctx, pts)
    ugrid = _box_grid(spec.U, grid_u)
    agrid = _box_grid(spec.A, grid_a)
    joint_u = np.repeat(ugrid, len(agrid), axis=0)
    joint_a = np.tile(agrid, (len(ugrid), 1))
    records = []
    sweeps = (("H-MIN-U", joint_u, joint_a),
              ("H-MIN-A", None, agrid))
    for name, gu, ga in sweeps:
        G = len(ga)
        xi_rep = np.repeat(pts.xi, G, axis=0)
        pi_rep = np.repeat(pts.pi1, G, axis=0)
        a_eval = np.tile(ga, (K, 1))
        u_eval = np.tile(gu, (K, 1)) if gu is not None \
            else np.repeat(pts.u, G, axis=0)
        drift, _, status = transformed_drift_many(ctx, xi_rep, u_eval,
                                                  a_eval)
        H = np.einsum("bi,bi->b", pi_rep, drift).reshape(K, G)
        ok = (status == 0).reshape(K, G)
        counts = {"checked": int(ok.sum()), "skipped": int((~ok).sum())}
        rows = ok.any(axis=1)
        if not rows.any():
            records.append(_vacuous(name, counts,
                                    "no lattice point evaluated"))
            continue
        Hm = np.where(ok, H, np.inf)
        margins = np.where(rows, Hm.min(axis=1) - H0, np.inf)
        kb = int(np.argmin(margins))
        gb = int(np.argmin(Hm[kb]))
        margin = float(margins[kb])
        argmin = {"t": float(pts.t[kb]), "a": a_eval.reshape(K, G, -1)[kb, gb],
                  "h": float(Hm[kb, gb])}
        if gu is not None:
            argmin["u"] = gu[gb]
        records.append(ConditionRecord(name, margin >= -tol, margin,
                                       argmin, counts))
    return records


def check_transport(spec, ctx, traj, arc, grid_u, tol, points=None,
                    check_times=200):
    """TRANSPORT: the u-sweep Hamiltonian margin in original coordinates.

    Every per-time margin must reproduce the transformed-coordinates
    sweep (same lattice, candidate a) to 1e-5; a larger gap marks the
    record failed even when the margin itself clears the tolerance.
    """
    if grid_u < 2:
        raise GridError("hamiltonian grids need at least 2 points per "
                        "axis")
    pts = points if points is not None else build_check_points(
        spec, ctx, traj, arc, check_times)
    K = pts.count
    grid = _box_grid(spec.U, grid_u)
    G = len(grid)
    u_to = np.tile(grid, (K, 1))
    xi_rep = np.repeat(pts.xi, G, axis=0)
    a_rep = np.repeat(pts.a, G, axis=0)
    drift_t, _, st_t = transformed_drift_many(ctx, xi_rep, u_to, a_rep)
    Ht = np.einsum("bi,bi->b", np.repeat(pts.pi1, G, axis=0),
                   drift_t).reshape(K, G)
    x_rep = np.repeat(pts.x, G, axis=0)
    u_from = np.repeat(pts.u, G, axis=0)
    moved, st_o = transport_drift_many(ctx, x_rep, u_from, u_to, a_rep)
    Ho = np.einsum("bi,bi->b", np.repeat(pts.p1, G, axis=0),
                   moved).reshape(K, G)
    base, st_b = drift_values(spec, pts.x, pts.u, pts.a)
    if st_b.max() != 0:
        raise TransformError("drift failed on the candidate arc")
    H0_orig = np.einsum("bi,bi->b", pts.p1, base)
    H0_trans = _hamiltonian_baseline(ctx, pts)
    ok = ((st_t == 0) & (st_o == 0)).reshape(K, G)
    counts = {"checked": int(ok.sum()), "skipped": int((~ok).sum())}
    rows = ok.any(axis=1)
    if not rows.any():
        return _vacuous("TRANSPORT", counts, "no lattice point evaluated")
    Hom = np.where(ok, Ho, np.inf)
    Htm = np.where(ok, Ht, np.inf)
    margins_o = np.where(rows, Hom.min(axis=1) - H0_orig, np.inf)
    margins_t = np.where(rows, Htm.min(axis=1) - H0_trans, np.inf)
    gap = float(np.abs(np.where(rows, margins_o - margins_t, 0.0)).max())
    kb = int(np.argmin(margins_o))
    gb = int(np.argmin(Hom[kb]))
    margin = float(margins_o[kb])
    argmin = {"t": float(pts.t[kb]), "u": grid[gb], "h": float(Hom[kb, gb])}
    passed = margin >= -tol and gap <= _TRANSPORT_AGREE
    notes = f"max margin gap to transformed sweep {gap:.3e}"
    if gap > _TRANSPORT_AGREE:
        notes += f" exceeds {_TRANSPORT_AGREE:.0e}"
    return ConditionRecord("TRANSPORT", passed, margin, argmin, counts,
                           notes=notes)


# --- bounded-variation needle variations ------------------------------------

def check_variation_bv(spec, ctx, traj, arc, nu, sigma0, t, tol):
    """VARIATION-BV for one monotone variation starting at time t.

    Admissibility of u* + sigma0 nu is pre-checked on every grid node in
    [t, T] (both one-sided values at jumps); the first violation raises
    AdmissibilityError.  The margin pairs the impulse costate with the
    variation: pi2(t) . nu(t) plus the Radon integral of pi2 against
    d(nu) over (t, T]; the same number recomputed through the original
    coordinates must agree to 1e-6.
    """
    T = spec.T
    tnode = 1e-9 * max(1.0, T)
    if not (-tnode <= t <= T + tnode):
        raise ValidationError("variation time outside the horizon")
    if abs(float(nu.times[0]) - t) > tnode:
        raise ValidationError("variation must start at the given time")

    sel = np.nonzero(traj.t >= t - tnode)[0]
    lo, hi = spec.U[:, 0], spec.U[:, 1]
    for j in sel:
        tau = traj.t[j]
        for uval, side in ((traj.u_left[j], "left"),
                           (traj.u_right[j], "right")):
            nval = _variation_value(nu, tau, side)
            pert = uval + sigma0 * nval
            if (pert < lo - 1e-15).any() or (pert > hi + 1e-15).any():
                raise AdmissibilityError(
                    f"variation leaves the control set at t={tau:.6g}",
                    time=float(tau))

    # locate t on the grid (certify always lands on a node)
    idx = int(np.searchsorted(traj.t, t))
    node = None
    for j in (idx - 1, idx, idx + 1):
        if 0 <= j < len(traj.t) and abs(traj.t[j] - t) <= tnode:
            node = j
            break
    if node is not None:
        tt = float(traj.t[node])
        pi2_t = arc.pi2[node]
        x_t, u_t = traj.x_right[node], traj.u_right[node]
        pi_t = np.concatenate([arc.pi1[node], arc.pi2[node]])
    else:
        c = min(max(idx - 1, 0), len(traj.t) - 2)
        w = (t - traj.t[c]) / (traj.t[c + 1] - traj.t[c])
        tt = float(t)
        pi2_t = (1 - w) * arc.pi2[c] + w * arc.pi2[c + 1]
        pi_t = np.concatenate([
            (1 - w) * arc.pi1[c] + w * arc.pi1[c + 1], pi2_t])
        ustart, uend, _ = traj.cell_controls()
        u_t = (1 - w) * ustart[c] + w * uend[c]
        xi_t = (1 - w) * traj.xi[c] + w * traj.xi[c + 1]
        pt, status = unstraighten_many(ctx, xi_t, u_t)
        if status.max() != 0:
            raise TransformError("state reconstruction failed at the "
                                 "variation time")
        x_t = pt[0, :spec.n]

    nu0 = nu.initial_value()
    margin = float(pi2_t @ nu0
                   + radon_integral(traj.t, arc.pi2, nu, window=(tt, T)))

    # independent pairing: the same number through original coordinates
    D, status = straighten_jacobian_many(ctx, x_t, u_t)
    if status.max() != 0:
        raise TransformError("straightening Jacobian failed at the "
                             "variation time")
    p_t = pi_t @ D[0]
    gv, st = impulse_values(spec, x_t[None], u_t[None])
    if st.max() != 0:
        raise TransformError("impulse fields failed at the variation "
                             "time")
    lhs = float(p_t[:spec.n] @ (nu0 @ gv[0]) + p_t[spec.n:] @ nu0)
    gap = abs(lhs - float(pi2_t @ nu0))
    passed = margin >= -tol and gap <= _PAIRING_AGREE
    notes = f"pairing gap {gap:.3e}"
    if gap > _PAIRING_AGREE:
        notes += f" exceeds {_PAIRING_AGREE:.0e}"
    return ConditionRecord("VARIATION-BV", passed, margin,
                           {"t": tt}, {"checked": 1, "skipped": 0},
                           notes=notes)


def _variation_value(nu, tau, side):
    t0 = float(nu.times[0])
    if tau < t0 - 1e-12:
        return np.zeros(nu.left.shape[1])
    return nu.value_at(min(max(tau, t0), float(nu.times[-1])), side=side)


# --- bracket conditions -----------------------------------------------------

def check_nc_first(spec, ctx, traj, arc, tol, sigma0=1e-6,
                   orientation="derived", points=None, check_times=200):
    """NC-I and NC-II: costate against g_i and against [g_i, f].

    NC-I counts a channel at a probe time only when the one-sided bump
    u* + sigma0 e_i stays admissible from that time through T; with the
    'derived' orientation the pairing must be >= -tol, while 'printed'
    flips the sign before the same rule and keeps the raw value in the
    notes.  NC-II needs only pointwise admissibility and must agree
    with the eta-derivative of the transformed Hamiltonian to 1e-6.
    """
    if orientation not in ("derived", "printed"):
        raise ValidationError("orientation must be 'derived' or "
                              "'printed'")
    pts = points if points is not None else build_check_points(
        spec, ctx, traj, arc, check_times)
    K, n, m = pts.count, spec.n, spec.m

    gv, status = impulse_values(spec, pts.x, pts.u)
    raw = np.einsum("bj,bkj->bk", pts.p1, gv) + pts.p2
    adm_up = _admissible_bumps(spec, pts, sigma0, +1.0)
    tail = np.logical_and.accumulate(adm_up[::-1], axis=0)[::-1]
    usable = tail & (status == 0)[:, None]
    counts = {"checked": int(usable.sum()),
              "skipped": int(K * m - usable.sum())}
    if usable.any():
        val = raw if orientation == "derived" else -raw
        masked = np.where(usable, val, np.inf)
        kb, ib = np.unravel_index(int(np.argmin(masked)), masked.shape)
        margin = float(masked[kb, ib])
        notes = f"channel {ib + 1}"
        if orientation == "printed":
            notes += (f"; raw pairing {raw[kb, ib]:.6e} "
                      "(printed orientation)")
        rec1 = ConditionRecord("NC-I", margin >= -tol, margin,
                               {"t": float(pts.t[kb]), "h": margin},
                               counts, notes=notes)
    else:
        rec1 = _vacuous("NC-I", counts, "no tail-admissible channel")

    drift_field = spec.aug_drift()
    firsts = [lie_bracket(spec, spec.aug_impulse(i), drift_field)
              for i in range(m)]
    env = np.hstack([pts.x, pts.u, pts.a])
    v1, s1 = _bracket_values(spec, firsts, env)
    p_full = np.hstack([pts.p1, pts.p2])
    raw2 = np.einsum("bi,bki->bk", p_full, v1)
    grads = _drift_jacobians(ctx, pts.xi, pts.u, pts.a)
    cross = np.einsum("bi,bik->bk", pts.pi1, grads[:, :, n:])
    usable2 = adm_up & (s1 == 0)[:, None]
    counts2 = {"checked": int(usable2.sum()),
               "skipped": int(K * m - usable2.sum())}
    if usable2.any():
        gap = float(np.abs(np.where(usable2, raw2 - cross, 0.0)).max())
        masked = np.where(usable2, raw2, np.inf)
        kb, ib = np.unravel_index(int(np.argmin(masked)), masked.shape)
        margin = float(masked[kb, ib])
        notes = (f"channel {ib + 1}; max gap to transformed derivative "
                 f"{gap:.3e}")
        passed = margin >= -tol and gap <= _BRACKET_AGREE
        if gap > _BRACKET_AGREE:
            notes += f" exceeds {_BRACKET_AGREE:.0e}"
        rec2 = ConditionRecord("NC-II", passed, margin,
                               {"t": float(pts.t[kb]), "h": margin},
                               counts2, notes=notes)
    else:
        rec2 = _vacuous("NC-II", counts2, "no admissible channel")
    return [rec1, rec2]


def default_directions(m, extra=16, seed=0):
    """Axis, diagonal, and seeded random unit directions in R^m."""
    eye = np.eye(m)
    dirs = [eye[i] for i in range(m)] + [-eye[i] for i in range(m)]
    root = np.sqrt(2.0)
    for i in range(m):
        for j in range(i + 1, m):
            dirs.append((eye[i] + eye[j]) / root)
            dirs.append((eye[i] - eye[j]) / root)
    if extra > 0:
        dirs.extend(unit_directions(extra, m, seed))
    return np.array(dirs)


def _bracket_values(spec, fields, env):
    bank = compile_bank([c for f in fields for c in f.components],
                        spec.all_names)
    vals, status = run_bank(bank, env)
    N = spec.n + spec.m
    return vals.reshape(len(env), len(fields), N), status


def _hessian_fd(ctx, pts, m, delta=1e-4):
    """pi1 . d2F/deta2 by central second differences, (K, m, m)."""
    K = pts.count
    steps = delta * (1.0 + np.abs(pts.u))        # (K, m)
    blocks = [pts.u]
    for j in range(m):
        e = np.zeros(m)
        e[j] = 1.0
        blocks.append(pts.u + steps[:, j:j + 1] * e)
        blocks.append(pts.u - steps[:, j:j + 1] * e)
    for j in range(m):
        for k in range(j + 1, m):
            ej, ek = np.zeros(m), np.zeros(m)
            ej[j] = 1.0
            ek[k] = 1.0
            sj, sk = steps[:, j:j + 1], steps[:, k:k + 1]
            blocks.append(pts.u + sj * ej + sk * ek)
            blocks.append(pts.u + sj * ej - sk * ek)
            blocks.append(pts.u - sj * ej + sk * ek)
            blocks.append(pts.u - sj * ej - sk * ek)
    R = len(blocks)
    u_eval = np.vstack(blocks)
    xi_rep = np.tile(pts.xi, (R, 1))
    a_rep = np.tile(pts.a, (R, 1))
    drift, _, status = transformed_drift_many(ctx, xi_rep, u_eval, a_rep)
    if status.max() != 0:
        raise TransformError("transformed drift failed in the Hessian "
                             "probe")
    h = np.einsum("bi,bi->b", np.tile(pts.pi1, (R, 1)),
                  drift).reshape(R, K)
    H = np.empty((K, m, m))
    for j in range(m):
        H[:, j, j] = (h[1 + 2 * j] - 2.0 * h[0] + h[2 + 2 * j]) \
            / steps[:, j] ** 2
    pos = 1 + 2 * m
    for j in range(m):
        for k in range(j + 1, m):
            num = h[pos] - h[pos + 1] - h[pos + 2] + h[pos + 3]
            H[:, j, k] = H[:, k, j] = num / (4.0 * steps[:, j]
                                             * steps[:, k])
            pos += 4
    return H


def check_nc_second(spec, ctx, traj, arc, directions, tol, sigma0=1e-6,
                    points=None, check_times=200):
    """NC-III: symmetry and positivity of Q_jk = p . [g_j, [g_k, f]].

    Q is examined on the two-sided admissible index set J(t); the
    quadratic form is swept over unit directions supported on J(t), and
    Q must match the eta-Hessian of the transformed Hamiltonian to
    1e-5.
    """
    pts = points if points is not None else build_check_points(
        spec, ctx, traj, arc, check_times)
    K, m = pts.count, spec.m
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    env = np.hstack([pts.x, pts.u, pts.a])
    p_full = np.hstack([pts.p1, pts.p2])

    drift_field = spec.aug_drift()
    firsts = [lie_bracket(spec, spec.aug_impulse(i), drift_field)
              for i in range(m)]
    seconds = [lie_bracket(spec, spec.aug_impulse(j), firsts[k])
               for j in range(m) for k in range(m)]
    v2, s2 = _bracket_values(spec, seconds, env)
    Q = np.einsum("bi,bki->bk", p_full, v2).reshape(K, m, m)
    rows_ok = s2 == 0

    two_sided = (_admissible_bumps(spec, pts, sigma0, +1.0)
                 & _admissible_bumps(spec, pts, sigma0, -1.0))
    pair_mask = two_sided[:, :, None] & two_sided[:, None, :]
    sym_rows = rows_ok & two_sided.any(axis=1)
    countsS = {"checked": int(sym_rows.sum()),
               "skipped": int(K - sym_rows.sum())}
    if sym_rows.any():
        asym = np.abs(Q - np.transpose(Q, (0, 2, 1)))
        asym = np.where(pair_mask, asym, 0.0).max(axis=(1, 2))
        asym = np.where(sym_rows, asym, -np.inf)
        kb = int(np.argmax(asym))
        margin_s = float(asym[kb])
        recS = ConditionRecord("NC-III-SYM", margin_s <= tol, margin_s,
                               {"t": float(pts.t[kb]), "h": margin_s},
                               countsS)
    else:
        recS = _vacuous("NC-III-SYM", countsS,
                        "no two-sided admissible channel")

    H_fd = _hessian_fd(ctx, pts, m)
    gapH = float(np.abs(np.where(rows_ok[:, None, None], Q - H_fd,
                                 0.0)).max()) if rows_ok.any() else 0.0

    D = len(directions)
    quad = np.einsum("dj,bjk,dk->bd", directions, Q, directions)
    usable = np.empty((K, D), dtype=bool)
    for d in range(D):
        supp = np.abs(directions[d]) > 1e-12
        usable[:, d] = two_sided[:, supp].all(axis=1) if supp.any() \
            else False
    usable &= rows_ok[:, None]
    countsP = {"checked": int(usable.sum()),
               "skipped": int(K * D - usable.sum())}
    if usable.any():
        masked = np.where(usable, quad, np.inf)
        kb, db = np.unravel_index(int(np.argmin(masked)), masked.shape)
        margin_p = float(masked[kb, db])
        vec = ", ".join(f"{c:.6g}" for c in directions[db])
        notes = (f"direction [{vec}]; max gap to transformed Hessian "
                 f"{gapH:.3e}")
        passed = margin_p >= -tol and gapH <= _HESSIAN_AGREE
        if gapH > _HESSIAN_AGREE:
            notes += f" exceeds {_HESSIAN_AGREE:.0e}"
        recP = ConditionRecord("NC-III-PSD", passed, margin_p,
                               {"t": float(pts.t[kb]), "h": margin_p},
                               countsP, notes=notes)
    else:
        recP = _vacuous("NC-III-PSD", countsP,
                        "no two-sided admissible direction")
    return [recS, recP]


# --- orchestration -----------------------------------------------------------

def _aggregate_variations(spec, ctx, traj, arc, opts):
    m = spec.m
    records = []
    skipped = 0
    for frac in opts.variation_times:
        tv = float(frac) * spec.T
        for i in range(m):
            for sign in (1.0, -1.0):
                direction = np.zeros(m)
                direction[i] = sign
                nu = constant_variation(direction, tv, spec.T)
                try:
                    records.append(check_variation_bv(
                        spec, ctx, traj, arc, nu, opts.sigma0, tv,
                        opts.tol))
                except AdmissibilityError:
                    skipped += 1
    counts = {"checked": len(records), "skipped": skipped}
    if not records:
        return _vacuous("VARIATION-BV", counts,
                        "all variations inadmissible")
    worst = min(records, key=lambda r: r.margin)
    passed = all(r.passed for r in records)
    return ConditionRecord("VARIATION-BV", passed, worst.margin,
                           worst.argmin, counts, notes=worst.notes)


def certify(spec, ctx, u, a, options=None):
    """Run the full certificate battery on a candidate pair (u, a).

    Integrates the candidate, solves and pulls back the costate, then
    emits one record per condition in a fixed order.  Any toolkit error
    is re-raised with the failing stage prefixed to its message.
    """
    opts = options if options is not None else CertifyOptions()
    step = opts.step if opts.step is not None else spec.T / 1000.0
    stage = "integrate"
    try:
        traj = integrate_impulsive(spec, ctx, u, a, step=step)
        stage = "adjoint"
        arc = solve_transformed_adjoint(spec, ctx, traj)
        stage = "pull-back"
        arc = pull_back_adjoint(spec, ctx, arc, traj)
        stage = "probe-points"
        pts = build_check_points(spec, ctx, traj, arc, opts.check_times)
        stage = "hamiltonian-minimum"
        records = check_hamiltonian_min(spec, ctx, traj, arc,
                                        opts.grid_u, opts.grid_a,
                                        opts.tol, points=pts)
        stage = "transport"
        records.append(check_transport(spec, ctx, traj, arc, opts.grid_u,
                                       opts.tol, points=pts))
        stage = "variation"
        records.append(_aggregate_variations(spec, ctx, traj, arc, opts))
        stage = "first-order"
        records.extend(check_nc_first(spec, ctx, traj, arc, opts.tol,
                                      sigma0=opts.sigma0,
                                      orientation=opts.nc1_orientation,
                                      points=pts))
        stage = "second-order"
        dirs = default_directions(spec.m, opts.extra_directions,
                                  opts.seed)
        records.extend(check_nc_second(spec, ctx, traj, arc, dirs,
                                       opts.tol, sigma0=opts.sigma0,
                                       points=pts))
    except FlowboxError as exc:
        exc.args = (f"certify stage '{stage}': {exc.args[0]}",) \
            + exc.args[1:]
        raise
    overall = all(r.passed for r in records)
    return CertificateReport(records, overall, opts.tol, opts)
