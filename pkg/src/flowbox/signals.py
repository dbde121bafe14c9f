"""Piecewise signal types: controls, ordinary controls, variations.

A control signal is piecewise linear between breakpoints with explicit
left/right limits at each breakpoint, so jumps are first-class data, not
numerical artifacts.  Inside a cell the value runs linearly from the
right limit at the cell's start to the left limit at its end (piecewise
constant signals are the slope-zero case and must satisfy that
constancy cell by cell).  A per-breakpoint side flag fixes the pointwise
value; the default is right-continuity except at the final time.

Ordinary controls are piecewise constant cell values with no side
bookkeeping (they only enter integrals).  Variation maps are the same
piecewise-linear-with-jumps shape as controls but live on a subinterval
[t, T] and are paired with the jump-measure integral below.
"""

import json
from dataclasses import dataclass

import numpy as np

from .errors import GridError, ValidationError

_SIDE_RIGHT = 0
_SIDE_LEFT = 1


def _as_times(values, path):
    t = np.asarray(values, dtype=float)
    if t.ndim != 1 or t.size < 2:
        raise ValidationError("expected at least two breakpoints", path)
    if not np.all(np.isfinite(t)):
        raise ValidationError("breakpoints must be finite", path)
    if not np.all(np.diff(t) > 0):
        raise ValidationError("breakpoints must be strictly increasing",
                              path)
    return t


@dataclass(eq=False)
class ControlSignal:
    kind: str                 # "pwc" or "pwl"
    times: np.ndarray         # (K,)
    left: np.ndarray          # (K, m) left limits
    right: np.ndarray         # (K, m) right limits
    pointwise: np.ndarray     # (K,) 0 = right limit, 1 = left limit

    @property
    def m(self):
        return self.left.shape[1]

    @property
    def t_end(self):
        return float(self.times[-1])

    def jump_indices(self):
        return np.flatnonzero(np.abs(self.left - self.right).max(axis=1) > 0)

    def is_continuous(self, tol=0.0):
        return np.abs(self.left - self.right).max() <= tol

    def point_values(self):
        """The pointwise value at every breakpoint, per the side flags."""
        out = self.right.copy()
        sel = self.pointwise == _SIDE_LEFT
        out[sel] = self.left[sel]
        return out

    def value_at(self, t, side="point"):
        """Value at time t; ``side`` is "left", "right" or "point"."""
        t = float(t)
        times = self.times
        tol = 1e-12 * max(1.0, abs(self.t_end))
        if t < times[0] - 1e-9 or t > times[-1] + 1e-9:
            raise ValidationError(f"time {t} outside signal domain")
        t = min(max(t, times[0]), times[-1])
        j = int(np.searchsorted(times, t, side="right")) - 1
        j = min(max(j, 0), len(times) - 2)
        for node in (j, j + 1):
            if abs(times[node] - t) <= tol:
                if side == "left":
                    return (self.left[node] if node > 0
                            else self.left[0]).copy()
                if side == "right":
                    return (self.right[node] if node < len(times) - 1
                            else self.right[node]).copy()
                return (self.left[node]
                        if self.pointwise[node] == _SIDE_LEFT
                        else self.right[node]).copy()
        frac = (t - times[j]) / (times[j + 1] - times[j])
        return self.right[j] + frac * (self.left[j + 1] - self.right[j])

    def cell_endpoints(self, grid):
        """One-sided values at both ends of every grid cell.

        ``grid`` must contain every breakpoint of the signal, so each
        grid cell lies inside a single signal cell; returns
        (start_values, end_values), both (len(grid)-1, m).
        """
        grid = np.asarray(grid, dtype=float)
        mids = 0.5 * (grid[:-1] + grid[1:])
        j = np.clip(np.searchsorted(self.times, mids) - 1, 0,
                    len(self.times) - 2)
        width = self.times[j + 1] - self.times[j]
        span = self.left[j + 1] - self.right[j]
        fs = ((grid[:-1] - self.times[j]) / width)[:, None]
        fe = ((grid[1:] - self.times[j]) / width)[:, None]
        return self.right[j] + fs * span, self.right[j] + fe * span

    def to_json_dict(self):
        return {
            "kind": self.kind,
            "breakpoints": [float(t) for t in self.times],
            "left": [[float(v) for v in row] for row in self.left],
            "right": [[float(v) for v in row] for row in self.right],
            "pointwise_side": ["left" if s == _SIDE_LEFT else "right"
                               for s in self.pointwise],
        }


def default_sides(count):
    sides = np.zeros(count, dtype=np.int8)
    sides[-1] = _SIDE_LEFT
    return sides


def make_control(kind, times, left, right, pointwise=None):
    """Validated ControlSignal from raw arrays."""
    if kind not in ("pwc", "pwl"):
        raise ValidationError("kind must be 'pwc' or 'pwl'", "kind")
    times = _as_times(times, "breakpoints")
    left = np.atleast_2d(np.asarray(left, dtype=float))
    right = np.atleast_2d(np.asarray(right, dtype=float))
    K = len(times)
    if left.shape != right.shape or left.shape[0] != K:
        raise ValidationError("left/right must both be (breakpoints, m)")
    if not (np.all(np.isfinite(left)) and np.all(np.isfinite(right))):
        raise ValidationError("signal values must be finite")
    if pointwise is None:
        pointwise = default_sides(K)
    else:
        pointwise = np.asarray(pointwise, dtype=np.int8)
        if pointwise.shape != (K,):
            raise ValidationError("pointwise_side length mismatch",
                                  "pointwise_side")
    if kind == "pwc":
        drift = np.abs(left[1:] - right[:-1]).max() if K > 1 else 0.0
        if drift > 0:
            raise ValidationError("pwc signal changes value inside a cell")
    return ControlSignal(kind, times, left, right, pointwise)


def piecewise_constant(times, values, initial=None):
    """Signal holding values[i] on cell i; ``initial`` sets u(0) if the
    signal is meant to jump right at the start."""
    times = _as_times(times, "breakpoints")
    values = np.atleast_2d(np.asarray(values, dtype=float))
    K = len(times)
    if values.shape[0] != K - 1:
        raise ValidationError("need one value row per cell")
    right = np.vstack([values, values[-1]])
    left = np.vstack([values[0] if initial is None else initial, values])
    sides = default_sides(K)
    if initial is not None:
        sides[0] = _SIDE_LEFT
    return make_control("pwc", times, left, right, sides)


def piecewise_linear(times, knots):
    """Continuous piecewise-linear signal through the given knots."""
    knots = np.atleast_2d(np.asarray(knots, dtype=float))
    return make_control("pwl", times, knots, knots)


def load_control(doc, spec=None):
    """Parse and validate a control-signal JSON document.

    With ``spec`` given, also enforces the system-level invariants: the
    domain is [0, T], every value lies in U (small slack), and the
    pointwise initial value equals u0.
    """
    if isinstance(doc, (str, bytes)):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"not valid JSON: {exc}")
    if not isinstance(doc, dict):
        raise ValidationError("expected a JSON object")
    for key in ("kind", "breakpoints", "left", "right"):
        if key not in doc:
            raise ValidationError("missing required field", key)
    sides = None
    if "pointwise_side" in doc:
        raw = doc["pointwise_side"]
        if (not isinstance(raw, list)
                or any(s not in ("left", "right") for s in raw)):
            raise ValidationError("entries must be 'left' or 'right'",
                                  "pointwise_side")
        sides = np.array([_SIDE_LEFT if s == "left" else _SIDE_RIGHT
                          for s in raw], dtype=np.int8)
    sig = make_control(doc["kind"], doc["breakpoints"], doc["left"],
                       doc["right"], sides)
    if spec is not None:
        _check_against_system(sig, spec)
    return sig


def _check_against_system(sig, spec):
    T = spec.T
    if abs(sig.times[0]) > 1e-9 or abs(sig.times[-1] - T) > 1e-9 * max(1, T):
        raise ValidationError("signal must cover [0, T] exactly",
                              "breakpoints")
    sig.times[0] = 0.0
    sig.times[-1] = T
    if sig.m != spec.m:
        raise ValidationError(f"expected {spec.m} control components")
    lo = spec.U[:, 0] - 1e-9
    hi = spec.U[:, 1] + 1e-9
    for name, arr in (("left", sig.left), ("right", sig.right)):
        if np.any(arr < lo) or np.any(arr > hi):
            raise ValidationError("control value leaves the admissible box",
                                  name)
    start = sig.value_at(0.0, "point")
    if np.abs(start - spec.u0).max() > 1e-9:
        raise ValidationError(
            f"pointwise initial value {start.tolist()} differs from "
            f"u0 = {spec.u0.tolist()}")


@dataclass(eq=False)
class OrdinarySignal:
    times: np.ndarray      # (K,)
    values: np.ndarray     # (K-1, l) cell values

    @property
    def l(self):
        return self.values.shape[1]

    def value_at(self, t):
        t = float(t)
        j = int(np.searchsorted(self.times, t, side="right")) - 1
        j = min(max(j, 0), len(self.times) - 2)
        return self.values[j].copy()

    def cell_values(self, grid):
        grid = np.asarray(grid, dtype=float)
        mids = 0.5 * (grid[:-1] + grid[1:])
        j = np.clip(np.searchsorted(self.times, mids) - 1, 0,
                    len(self.times) - 2)
        return self.values[j]

    def to_json_dict(self):
        return {
            "kind": "pwc",
            "breakpoints": [float(t) for t in self.times],
            "values": [[float(v) for v in row] for row in self.values],
        }


def constant_ordinary(T, value):
    value = np.atleast_1d(np.asarray(value, dtype=float))
    return OrdinarySignal(np.array([0.0, float(T)]), value[None, :])


def load_ordinary(doc, spec=None):
    """Parse and validate an ordinary-control JSON document (pwc only)."""
    if isinstance(doc, (str, bytes)):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"not valid JSON: {exc}")
    if not isinstance(doc, dict):
        raise ValidationError("expected a JSON object")
    for key in ("kind", "breakpoints", "values"):
        if key not in doc:
            raise ValidationError("missing required field", key)
    if doc["kind"] != "pwc":
        raise ValidationError("ordinary controls must be piecewise "
                              "constant", "kind")
    times = _as_times(doc["breakpoints"], "breakpoints")
    values = np.atleast_2d(np.asarray(doc["values"], dtype=float))
    if values.shape[0] != len(times) - 1:
        raise ValidationError("need one value row per cell", "values")
    if not np.all(np.isfinite(values)):
        raise ValidationError("values must be finite", "values")
    sig = OrdinarySignal(times, values)
    if spec is not None:
        T = spec.T
        if (abs(times[0]) > 1e-9
                or abs(times[-1] - T) > 1e-9 * max(1, T)):
            raise ValidationError("signal must cover [0, T] exactly",
                                  "breakpoints")
        sig.times[0] = 0.0
        sig.times[-1] = T
        if sig.l != spec.l:
            raise ValidationError(f"expected {spec.l} ordinary components")
        lo = spec.A[:, 0] - 1e-9
        hi = spec.A[:, 1] + 1e-9
        if np.any(values < lo) or np.any(values > hi):
            raise ValidationError("ordinary value leaves the admissible "
                                  "box", "values")
    return sig


# --- mollification and exact L1 geometry ---------------------------------

def mollify(sig, k):
    """Continuous ramp replacement of every jump, window radius 1/k.

    Each jump is replaced by a linear ramp across a window of radius 1/k
    (clipped to half the gap to neighbouring breakpoints, and one-sided
    at the interval ends).  Away from the windows the result coincides
    with the original signal, and it always matches the pointwise values
    at 0 and T.
    """
    if k <= 0:
        raise ValidationError("k must be positive")
    times = sig.times
    K = len(times)
    jump = np.abs(sig.left - sig.right).max(axis=1) > 0
    knot_t = []
    knot_v = []

    def push(t, v):
        if knot_t and t <= knot_t[-1] + 1e-15:
            return
        knot_t.append(float(t))
        knot_v.append(np.asarray(v, dtype=float))

    for j in range(K):
        tj = times[j]
        if not jump[j]:
            value = sig.left[j] if j == K - 1 else sig.right[j]
            push(tj, value)
            continue
        gap_prev = tj - times[j - 1] if j > 0 else np.inf
        gap_next = times[j + 1] - tj if j < K - 1 else np.inf
        radius = min(1.0 / k, gap_prev / 2.0, gap_next / 2.0)
        if j == 0:
            push(tj, sig.value_at(tj, "point"))
            push(tj + radius, sig.value_at(tj + radius))
        elif j == K - 1:
            push(tj - radius, sig.value_at(tj - radius))
            push(tj, sig.value_at(tj, "point"))
        else:
            push(tj - radius, sig.value_at(tj - radius))
            push(tj + radius, sig.value_at(tj + radius))
    return piecewise_linear(np.array(knot_t), np.vstack(knot_v))


def _abs_linear_integral(width, p, q):
    """Exact integral of |linear segment| running p -> q over ``width``."""
    same = p * q >= 0
    tri = np.where(same, 0.5 * (np.abs(p) + np.abs(q)),
                   0.5 * (p * p + q * q) / np.maximum(np.abs(q - p), 1e-300))
    return width * tri


def signal_l1_distance(sa, sb):
    """Exact L1 distance between two piecewise-linear-with-jumps signals."""
    if abs(sa.times[0] - sb.times[0]) > 1e-9 or \
            abs(sa.times[-1] - sb.times[-1]) > 1e-9:
        raise ValidationError("signals live on different intervals")
    grid = np.unique(np.concatenate([sa.times, sb.times]))
    a0, a1 = sa.cell_endpoints(grid)
    b0, b1 = sb.cell_endpoints(grid)
    width = np.diff(grid)[:, None]
    return float(_abs_linear_integral(width, a0 - b0, a1 - b1).sum())


# --- variations ------------------------------------------------------------

@dataclass(eq=False)
class VariationMap:
    """Bounded-variation direction of perturbation on [t, T].

    Piecewise linear with jumps, right-continuous at its start (the
    initial value IS the starting jump of the perturbed control) and
    continuous at its end.
    """

    times: np.ndarray
    left: np.ndarray
    right: np.ndarray

    @property
    def m(self):
        return self.left.shape[1]

    @property
    def t_start(self):
        return float(self.times[0])

    def value_at(self, t, side="right"):
        helper = ControlSignal("pwl", self.times, self.left, self.right,
                               default_sides(len(self.times)))
        return helper.value_at(t, side)

    def initial_value(self):
        return self.right[0].copy()


def make_variation(times, left, right):
    times = _as_times(times, "breakpoints")
    left = np.atleast_2d(np.asarray(left, dtype=float))
    right = np.atleast_2d(np.asarray(right, dtype=float))
    if left.shape != right.shape or left.shape[0] != len(times):
        raise ValidationError("left/right must both be (breakpoints, m)")
    if np.abs(left[-1] - right[-1]).max() > 0:
        raise ValidationError("a variation cannot jump at the final time")
    return VariationMap(times, left, right)


def constant_variation(direction, t_start, T):
    direction = np.atleast_1d(np.asarray(direction, dtype=float))
    times = np.array([float(t_start), float(T)])
    vals = np.vstack([direction, direction])
    return make_variation(times, vals, vals)


def radon_integral(sample_times, sample_values, variation, window=None):
    """Integral of a sampled covector against the variation's derivative
    measure: jump atoms plus the absolutely continuous slope part.

    ``sample_values`` is piecewise linear between ``sample_times`` and
    must cover the window (default: the variation's own interval);
    otherwise a GridError.
    """
    st = np.asarray(sample_times, dtype=float)
    sv = np.atleast_2d(np.asarray(sample_values, dtype=float))
    if window is None:
        t0, t1 = variation.t_start, float(variation.times[-1])
    else:
        t0, t1 = float(window[0]), float(window[1])
    if st[0] > t0 + 1e-9 or st[-1] < t1 - 1e-9:
        raise GridError("covector samples do not cover the variation "
                        "interval")

    def p_at(ts):
        cols = [np.interp(ts, st, sv[:, c]) for c in range(sv.shape[1])]
        return np.stack(cols, axis=-1)

    total = 0.0
    # atoms at interior breakpoints of the variation
    for j in range(1, len(variation.times) - 1):
        delta = variation.right[j] - variation.left[j]
        if np.abs(delta).max() > 0:
            total += float(p_at(variation.times[j]) @ delta)
    # slope part, exact for piecewise-linear samples
    union = np.unique(np.concatenate([
        st[(st > t0) & (st < t1)], variation.times]))
    mids = 0.5 * (union[:-1] + union[1:])
    j = np.clip(np.searchsorted(variation.times, mids) - 1, 0,
                len(variation.times) - 2)
    width_cell = (variation.times[j + 1] - variation.times[j])[:, None]
    slope = (variation.left[j + 1] - variation.right[j]) / width_cell
    pv = p_at(union)
    seg = 0.5 * (pv[:-1] + pv[1:]) * np.diff(union)[:, None]
    total += float((seg * slope).sum())
    return total
