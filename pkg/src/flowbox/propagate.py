"""Trajectory integration: classical route and impulsive route.

For continuous piecewise-linear controls the augmented dynamics is a
plain ODE (the control-rate term is piecewise constant) and is
integrated directly.  For controls with jumps the state is propagated
in straightened coordinates -- where only the transformed drift acts
and jumps cost nothing -- and the original state is reconstructed at
every node through the inverse map, with both one-sided values at jump
nodes.

Also here: the mollified-control convergence experiment and the
trajectory-robustness ratio experiment, which together make the
generalized-solution notion executable.
"""

from dataclasses import dataclass

import numpy as np

from .errors import IntegrationError, ValidationError
from .signals import _abs_linear_integral, mollify
from .system import run_bank
from .transform import straighten, straighten_many, unstraighten_many
from .transform import transformed_drift_many

_NORM_GUARD = 1e12


@dataclass(eq=False)
class Trajectory:
    """State history on a refined grid, with one-sided values at jumps.

    ``xi`` is the straightened state and is continuous; ``x`` jumps
    exactly where the control jumps, so both sides are stored.  The
    ``*_point`` arrays carry the pointwise convention of the driving
    signal.  ``a_left``/``a_right`` are the ordinary-control cell values
    on each side of a node.
    """

    t: np.ndarray
    xi: np.ndarray
    x_left: np.ndarray
    x_right: np.ndarray
    x_point: np.ndarray
    u_left: np.ndarray
    u_right: np.ndarray
    u_point: np.ndarray
    a_left: np.ndarray
    a_right: np.ndarray
    step: float
    method: str = "rk4"

    @property
    def n(self):
        return self.xi.shape[1]

    @property
    def m(self):
        return self.u_left.shape[1]

    def jump_mask(self):
        return np.abs(self.u_left - self.u_right).max(axis=1) > 0

    def cell_controls(self):
        """One-sided u at both ends of every grid cell, and the a value."""
        return self.u_right[:-1], self.u_left[1:], self.a_right[:-1]


def make_grid(T, step, breakpoint_sets=()):
    """Uniform grid of spacing ~``step`` refined by interior breakpoints.

    Base nodes landing within 1e-12 of a breakpoint are replaced by the
    breakpoint itself so signal cells are split exactly.
    """
    if step <= 0:
        raise ValidationError("step must be positive")
    if step > T:
        raise ValidationError("step exceeds the horizon")
    count = max(1, int(round(T / step)))
    base = np.linspace(0.0, T, count + 1)
    extras = [np.asarray(b, dtype=float) for b in breakpoint_sets]
    if extras:
        extra = np.unique(np.concatenate(extras))
        extra = extra[(extra > 1e-12) & (extra < T - 1e-12)]
    else:
        extra = np.empty(0)
    if extra.size:
        dist = np.abs(base[:, None] - extra[None, :]).min(axis=1)
        base = base[dist > 1e-12]
        grid = np.sort(np.concatenate([base, extra]))
    else:
        grid = base
    return grid


def _stage_env(x, u, a):
    return np.hstack([x, u, a])


def _classical_rhs(spec, x, u, udot, a):
    """f(x,u,a) + sum_k udot_k g_k(x,u) for stacked rows."""
    fvals, fst = run_bank(spec.drift_bank, _stage_env(x, u, a))
    gvals, gst = run_bank(spec.impulse_bank, np.hstack([x, u]))
    status = np.maximum(fst, gst)
    g3 = gvals.reshape(x.shape[0], spec.m, spec.n)
    return fvals + np.einsum("bk,bkn->bn", udot, g3), status


def _integrate_classical_batch(spec, grid, ustart, uend, avals, x0s):
    """RK4 of the augmented dynamics for B signals sharing one grid.

    ``ustart``/``uend`` are (B, C, m) one-sided control values per cell,
    ``avals`` (B, C, l); returns x at the nodes, (B, N, n).
    """
    B = x0s.shape[0]
    N = len(grid)
    xs = np.empty((B, N, spec.n))
    xs[:, 0] = x0s
    x = x0s.copy()
    for c in range(N - 1):
        h = grid[c + 1] - grid[c]
        us = ustart[:, c]
        ue = uend[:, c]
        um = 0.5 * (us + ue)
        udot = (ue - us) / h
        a = avals[:, c]
        k1, s1 = _classical_rhs(spec, x, us, udot, a)
        k2, s2 = _classical_rhs(spec, x + 0.5 * h * k1, um, udot, a)
        k3, s3 = _classical_rhs(spec, x + 0.5 * h * k2, um, udot, a)
        k4, s4 = _classical_rhs(spec, x + h * k3, ue, udot, a)
        if max(s1.max(), s2.max(), s3.max(), s4.max()) != 0:
            raise IntegrationError(
                f"field evaluation failed near t = {grid[c]:.6g}")
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if np.abs(x).max() > _NORM_GUARD:
            raise IntegrationError(
                f"trajectory norm exceeded {_NORM_GUARD:g} at "
                f"t = {grid[c + 1]:.6g}")
        xs[:, c + 1] = x
    return xs


def _point_sides(signal, grid, start_vals, end_vals):
    """Left/right/pointwise control arrays at the grid nodes."""
    u_right = np.vstack([start_vals, signal.right[-1][None, :]])
    u_left = np.vstack([signal.left[0][None, :], end_vals])
    u_point = u_right.copy()
    u_point[-1] = u_left[-1]
    # honor explicit side flags at the signal's own breakpoints
    idx = np.searchsorted(grid, signal.times)
    for j, node in enumerate(idx):
        if node >= len(grid):
            continue
        if abs(grid[min(node, len(grid) - 1)] - signal.times[j]) <= 1e-12:
            u_point[node] = (signal.left[j] if signal.pointwise[j] == 1
                             else signal.right[j])
    return u_left, u_right, u_point


def _a_sides(avals):
    a_right = np.vstack([avals, avals[-1][None, :]])
    a_left = np.vstack([avals[0][None, :], avals])
    return a_left, a_right


def integrate_smooth(spec, ctx, u, a, step=None, x0=None, with_xi=True):
    """Integrate the augmented dynamics directly (continuous u only).

    The control must be continuous piecewise-linear so its rate is
    piecewise constant and can be inserted exactly on every cell.
    """
    if not u.is_continuous(1e-12):
        raise ValidationError("the classical integrator requires a "
                              "continuous control signal")
    T = spec.T
    h = T / 1000.0 if step is None else float(step)
    grid = make_grid(T, h, [u.times, a.times])
    ustart, uend = u.cell_endpoints(grid)
    avals = a.cell_values(grid)
    x0 = spec.x0 if x0 is None else np.asarray(x0, dtype=float)
    xs = _integrate_classical_batch(spec, grid, ustart[None], uend[None],
                                    avals[None], x0[None])[0]
    u_left, u_right, u_point = _point_sides(u, grid, ustart, uend)
    a_left, a_right = _a_sides(avals)
    if with_xi:
        flat, status = straighten_many(ctx, xs, u_point)
        if status.max() != 0:
            raise IntegrationError("straightening failed while recording "
                                   "the transformed trajectory")
        xi = flat[:, :spec.n]
    else:
        xi = np.full((len(grid), spec.n), np.nan)
    return Trajectory(grid, xi, xs, xs.copy(), xs.copy(),
                      u_left, u_right, u_point, a_left, a_right, h)


def integrate_impulsive(spec, ctx, u, a, step=None, x0=None):
    """Integrate through straightened coordinates; u may jump.

    The transformed state starts at the image of (x0, u(0)), evolves
    under the transformed drift with one-sided control values inside
    each cell, and the original state is reconstructed on both sides of
    every node through the inverse map.
    """
    T = spec.T
    h = T / 1000.0 if step is None else float(step)
    x0 = spec.x0 if x0 is None else np.asarray(x0, dtype=float)
    u0 = u.value_at(0.0, "point")
    if np.abs(u0 - spec.u0).max() > 1e-9:
        raise ValidationError("control's pointwise initial value differs "
                              "from the system's u0")
    grid = make_grid(T, h, [u.times, a.times])
    ustart, uend = u.cell_endpoints(grid)
    avals = a.cell_values(grid)
    N = len(grid)

    xi = np.empty((N, spec.n))
    xi[0] = straighten(ctx, x0, u0)[:spec.n]
    cur = xi[0][None, :]
    for c in range(N - 1):
        h_c = grid[c + 1] - grid[c]
        us = ustart[c][None, :]
        ue = uend[c][None, :]
        um = 0.5 * (us + ue)
        a_c = avals[c][None, :]

        def F(xi_pt, u_pt):
            drift, _, status = transformed_drift_many(ctx, xi_pt, u_pt, a_c)
            if status[0] != 0:
                raise IntegrationError(
                    f"transformed drift undefined near t = {grid[c]:.6g}")
            return drift

        k1 = F(cur, us)
        k2 = F(cur + 0.5 * h_c * k1, um)
        k3 = F(cur + 0.5 * h_c * k2, um)
        k4 = F(cur + h_c * k3, ue)
        cur = cur + (h_c / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if np.abs(cur).max() > _NORM_GUARD:
            raise IntegrationError(
                f"trajectory norm exceeded {_NORM_GUARD:g} at "
                f"t = {grid[c + 1]:.6g}")
        xi[c + 1] = cur[0]

    u_left, u_right, u_point = _point_sides(u, grid, ustart, uend)
    a_left, a_right = _a_sides(avals)
    stacked_u = np.vstack([u_left, u_right, u_point])
    stacked_xi = np.vstack([xi, xi, xi])
    flat, status = unstraighten_many(ctx, stacked_xi, stacked_u)
    if status.max() != 0:
        raise IntegrationError("state reconstruction failed at a node")
    x_all = flat[:, :spec.n]
    x_left, x_right, x_point = (x_all[:N], x_all[N:2 * N], x_all[2 * N:])
    return Trajectory(grid, xi, x_left, x_right, x_point,
                      u_left, u_right, u_point, a_left, a_right, h)


# --- exact piecewise-linear L1 geometry on trajectories -------------------

def _interval_values(traj, grid):
    """One-sided x at both ends of every cell of a refining grid."""
    mids = 0.5 * (grid[:-1] + grid[1:])
    j = np.clip(np.searchsorted(traj.t, mids) - 1, 0, len(traj.t) - 2)
    width = (traj.t[j + 1] - traj.t[j])[:, None]
    span = traj.x_left[j + 1] - traj.x_right[j]
    fs = ((grid[:-1] - traj.t[j])[:, None]) / width
    fe = ((grid[1:] - traj.t[j])[:, None]) / width
    return traj.x_right[j] + fs * span, traj.x_right[j] + fe * span


def trajectory_l1_distance(ta, tb):
    """Exact integral of the componentwise |difference| over [0, T]."""
    grid = np.unique(np.concatenate([ta.t, tb.t]))
    a0, a1 = _interval_values(ta, grid)
    b0, b1 = _interval_values(tb, grid)
    width = np.diff(grid)[:, None]
    return float(_abs_linear_integral(width, a0 - b0, a1 - b1).sum())


@dataclass
class ApproxRow:
    k: int
    distance: float


@dataclass
class ApproxReport:
    """Convergence table of mollified classical runs to the impulsive one."""

    rows: list
    decreasing: bool
    ratios: list

    @property
    def passed(self):
        return self.decreasing

    def to_json_dict(self):
        return {
            "check": "approximation",
            "pass": bool(self.passed),
            "rows": [{"k": r.k, "l1_distance": r.distance}
                     for r in self.rows],
            "ratios": list(self.ratios),
        }


def approximation_check(spec, ctx, u, a, ks=(10, 20, 40), step=None):
    """Convergence of classical runs under mollified controls.

    For each k the control's jumps are smoothed over windows of radius
    1/k, the classical integrator is run, and the exact L1 distance to
    the impulsive trajectory is recorded.  The table must decrease.
    """
    ks = list(ks)
    if any(k2 <= k1 for k1, k2 in zip(ks, ks[1:])):
        raise ValidationError("ks must be strictly increasing")
    base = integrate_impulsive(spec, ctx, u, a, step=step)
    rows = []
    for k in ks:
        smooth_u = mollify(u, k)
        tr = integrate_smooth(spec, ctx, smooth_u, a, step=step,
                              with_xi=False)
        rows.append(ApproxRow(int(k), trajectory_l1_distance(base, tr)))
    dists = [r.distance for r in rows]
    ratios = [d2 / d1 if d1 > 0 else 0.0 for d1, d2 in zip(dists, dists[1:])]
    decreasing = all(d2 < d1 or d1 <= 1e-12
                     for d1, d2 in zip(dists, dists[1:]))
    return ApproxReport(rows, decreasing, ratios)


@dataclass
class RobustnessRow:
    lhs: float
    rhs: float
    ratio: float
    flagged: bool


@dataclass
class RobustnessReport:
    """Empirical continuity modulus of the input-to-trajectory map."""

    rows: list
    max_ratio: float
    flagged: int

    @property
    def passed(self):
        return self.flagged == 0

    def to_json_dict(self):
        return {
            "check": "robustness",
            "pass": bool(self.passed),
            "max_ratio": self.max_ratio,
            "flagged": self.flagged,
            "rows": [{"lhs": r.lhs, "rhs": r.rhs, "ratio": r.ratio,
                      "flagged": r.flagged} for r in self.rows],
        }


def robustness_gap(spec, ctx, pairs, a, step=None):
    """Trajectory-distance to input-distance ratios over control pairs.

    Each pair is (x0, u, x0_hat, u_hat) with continuous piecewise-linear
    controls.  The left side combines the terminal state gap with the
    integrated state gap; the right side combines initial-state,
    endpoint-control and integrated-control gaps.  A zero right side
    with a visible left side is flagged as an inconsistency.
    """
    T = spec.T
    h = T / 1000.0 if step is None else float(step)
    signals = []
    for x0, usig, x0h, uh in pairs:
        if not (usig.is_continuous(1e-12) and uh.is_continuous(1e-12)):
            raise ValidationError("robustness pairs need continuous "
                                  "controls")
        signals.extend([(np.asarray(x0, dtype=float), usig),
                        (np.asarray(x0h, dtype=float), uh)])
    grid = make_grid(T, h, [s.times for _, s in signals] + [a.times])
    C = len(grid) - 1
    B = len(signals)
    ustart = np.empty((B, C, spec.m))
    uend = np.empty((B, C, spec.m))
    for i, (_, sig) in enumerate(signals):
        ustart[i], uend[i] = sig.cell_endpoints(grid)
    avals = np.broadcast_to(a.cell_values(grid)[None], (B, C, spec.l))
    x0s = np.stack([x for x, _ in signals])
    xs = _integrate_classical_batch(spec, grid, ustart, uend, avals, x0s)

    u_nodes = np.concatenate([ustart, uend[:, -1:, :]], axis=1)
    rows = []
    worst = 0.0
    flagged = 0
    for p in range(len(pairs)):
        xa, xb = xs[2 * p], xs[2 * p + 1]
        ua, ub = u_nodes[2 * p], u_nodes[2 * p + 1]
        dx = np.linalg.norm(xa - xb, axis=1)
        du = np.linalg.norm(ua - ub, axis=1)
        lhs = float(dx[-1] + np.trapezoid(dx, grid))
        rhs = float(np.linalg.norm(x0s[2 * p] - x0s[2 * p + 1])
                    + du[0] + du[-1] + np.trapezoid(du, grid))
        if rhs < 1e-15:
            bad = lhs > 1e-10
            rows.append(RobustnessRow(lhs, rhs, 0.0, bad))
            flagged += int(bad)
            continue
        ratio = lhs / rhs
        worst = max(worst, ratio)
        rows.append(RobustnessRow(lhs, rhs, ratio, False))
    return RobustnessReport(rows, worst, flagged)
