"""Control-system descriptions: loading, vector fields, brackets.

A system couples a drift field (which may depend on the ordinary
control) with one impulse field per impulsive-control channel.  All
fields live on the augmented state (x, u): the impulse channel k moves
the state by gtilde_k and the control coordinate u_k by exactly one,
which is what makes the straightening construction possible when the
augmented impulse fields commute.

Variable naming in expressions is positional: x1..xn, u1..um, a1..al.
Impulse fields and the cost may reference x and u; the drift may also
reference a.
"""

import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import kernels
from .errors import DomainError, ParseError, ValidationError
from .expr import (Add, Expr, Mul, Num, Sub, compile_bank, diff, evaluate,
                   fold, parse)
from .sampling import halton, map_to_box

_TOP_KEYS = ("n", "m", "l", "T", "x0", "u0", "U", "A", "f", "g", "gamma")


@dataclass(frozen=True)
class AugField:
    """A vector field on the augmented state (x, u).

    ``components`` has n + m entries; impulse fields carry the constant
    unit vector e_k in the control block, the drift carries zeros there.
    """

    label: str
    components: tuple
    uses_ordinary: bool


@dataclass(eq=False)
class SystemSpec:
    """Validated in-memory form of a system description."""

    n: int
    m: int
    l: int
    T: float
    x0: np.ndarray
    u0: np.ndarray
    U: np.ndarray          # (m, 2) rows (lo, hi)
    A: np.ndarray          # (l, 2)
    f: tuple               # n drift expressions over (x, u, a)
    g: tuple               # m rows of n impulse expressions over (x, u)
    gamma: Expr            # terminal cost over (x, u)
    _bracket_cache: dict = field(default_factory=dict, repr=False)

    @property
    def x_names(self):
        return tuple(f"x{i + 1}" for i in range(self.n))

    @property
    def u_names(self):
        return tuple(f"u{i + 1}" for i in range(self.m))

    @property
    def a_names(self):
        return tuple(f"a{i + 1}" for i in range(self.l))

    @property
    def state_names(self):
        return self.x_names + self.u_names

    @property
    def all_names(self):
        return self.x_names + self.u_names + self.a_names

    # --- compiled program banks (built once, shared by the kernels) ---

    @cached_property
    def impulse_bank(self):
        progs = [self.g[k][j] for k in range(self.m) for j in range(self.n)]
        return compile_bank(progs, self.state_names)

    @cached_property
    def impulse_jacobian_bank(self):
        names = self.state_names
        progs = [diff(self.g[k][j], nm)
                 for k in range(self.m) for j in range(self.n) for nm in names]
        return compile_bank(progs, names)

    @cached_property
    def drift_bank(self):
        return compile_bank(list(self.f), self.all_names)

    @cached_property
    def drift_jacobian_bank(self):
        """d f_j / d (x, u) as programs over the full variable list."""
        progs = [diff(self.f[j], nm)
                 for j in range(self.n) for nm in self.state_names]
        return compile_bank(progs, self.all_names)

    @cached_property
    def cost_gradient_bank(self):
        progs = [diff(self.gamma, nm) for nm in self.state_names]
        return compile_bank(progs, self.state_names)

    @cached_property
    def impulse_hessian_bank(self):
        """Second derivatives of the impulse components, (k, j, c1, c2)."""
        names = self.state_names
        progs = []
        for k in range(self.m):
            for j in range(self.n):
                firsts = [diff(self.g[k][j], nm) for nm in names]
                progs.extend(diff(d1, nm2) for d1 in firsts for nm2 in names)
        return compile_bank(progs, names)

    # --- augmented fields ---

    def aug_drift(self):
        comps = tuple(self.f) + tuple(Num(0.0) for _ in range(self.m))
        return AugField("f", comps, True)

    def aug_impulse(self, k):
        if not 0 <= k < self.m:
            raise ValidationError(f"impulse index {k} out of range")
        unit = tuple(Num(1.0 if j == k else 0.0) for j in range(self.m))
        return AugField(f"g{k + 1}", tuple(self.g[k]) + unit, False)

    def environment(self, x, u, a=None):
        env = {}
        for nm, v in zip(self.x_names, np.asarray(x, dtype=float)):
            env[nm] = float(v)
        for nm, v in zip(self.u_names, np.asarray(u, dtype=float)):
            env[nm] = float(v)
        if a is not None:
            for nm, v in zip(self.a_names, np.asarray(a, dtype=float)):
                env[nm] = float(v)
        return env


def _fail(msg, path):
    raise ValidationError(msg, path)


def _get_int(doc, key, minimum):
    v = doc[key]
    if isinstance(v, bool) or not isinstance(v, int):
        _fail("expected an integer", key)
    if v < minimum:
        _fail(f"must be at least {minimum}", key)
    return v


def _get_number(v, path):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        _fail("expected a number", path)
    v = float(v)
    if not np.isfinite(v):
        _fail("must be finite", path)
    return v


def _get_vector(doc, key, length):
    v = doc[key]
    if not isinstance(v, list) or len(v) != length:
        _fail(f"expected a list of {length} numbers", key)
    return np.array([_get_number(x, f"{key}[{i}]") for i, x in enumerate(v)])


def _get_box(doc, key, rows):
    v = doc[key]
    if not isinstance(v, list) or len(v) != rows:
        _fail(f"expected {rows} [lo, hi] pairs", key)
    out = np.empty((rows, 2))
    for i, pair in enumerate(v):
        if not isinstance(pair, list) or len(pair) != 2:
            _fail("expected a [lo, hi] pair", f"{key}[{i}]")
        lo = _get_number(pair[0], f"{key}[{i}][0]")
        hi = _get_number(pair[1], f"{key}[{i}][1]")
        if lo > hi:
            _fail("lower bound exceeds upper bound", f"{key}[{i}]")
        out[i] = (lo, hi)
    return out


def _parse_expr(source, names, path):
    if not isinstance(source, str):
        _fail("expected an expression string", path)
    try:
        return fold(parse(source, names))
    except ParseError as exc:
        _fail(str(exc), path)


def load_system(source):
    """Build a :class:`SystemSpec` from a JSON text or a parsed dict.

    Every structural problem raises :class:`ValidationError` carrying the
    offending field path.
    """
    if isinstance(source, (str, bytes)):
        try:
            doc = json.loads(source)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"not valid JSON: {exc}")
    else:
        doc = source
    if not isinstance(doc, dict):
        _fail("expected a JSON object", "")
    for key in _TOP_KEYS:
        if key not in doc:
            _fail("missing required field", key)
    for key in doc:
        if key not in _TOP_KEYS:
            _fail("unknown field", key)

    n = _get_int(doc, "n", 1)
    m = _get_int(doc, "m", 1)
    l = _get_int(doc, "l", 1)
    T = _get_number(doc["T"], "T")
    if T <= 0:
        _fail("must be positive", "T")
    x0 = _get_vector(doc, "x0", n)
    u0 = _get_vector(doc, "u0", m)
    U = _get_box(doc, "U", m)
    A = _get_box(doc, "A", l)
    slack = 1e-9
    for k in range(m):
        if not (U[k, 0] - slack <= u0[k] <= U[k, 1] + slack):
            _fail(f"u0[{k}] = {u0[k]} lies outside U[{k}]", "u0")

    x_names = tuple(f"x{i + 1}" for i in range(n))
    u_names = tuple(f"u{i + 1}" for i in range(m))
    a_names = tuple(f"a{i + 1}" for i in range(l))

    fv = doc["f"]
    if not isinstance(fv, list) or len(fv) != n:
        _fail(f"expected {n} expression strings", "f")
    f_exprs = tuple(_parse_expr(src, x_names + u_names + a_names, f"f[{j}]")
                    for j, src in enumerate(fv))

    gv = doc["g"]
    if not isinstance(gv, list) or len(gv) != m:
        _fail(f"expected {m} lists of expression strings", "g")
    g_rows = []
    for k, row in enumerate(gv):
        if not isinstance(row, list) or len(row) != n:
            _fail(f"expected {n} expression strings", f"g[{k}]")
        g_rows.append(tuple(_parse_expr(src, x_names + u_names,
                                        f"g[{k}][{j}]")
                            for j, src in enumerate(row)))

    gamma = _parse_expr(doc["gamma"], x_names + u_names, "gamma")

    return SystemSpec(n=n, m=m, l=l, T=T, x0=x0, u0=u0, U=U, A=A,
                      f=f_exprs, g=tuple(g_rows), gamma=gamma)


def load_system_file(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ValidationError(f"cannot read system file: {exc}")
    return load_system(text)


def run_bank(bank, env2):
    """Evaluate a compiled bank on a batch of environments.

    Returns (values (B, P), status (B,)) where a nonzero status marks a
    row whose evaluation hit a domain error (those values read 0).
    """
    env2 = np.ascontiguousarray(env2, dtype=np.float64)
    B = env2.shape[0]
    out = np.empty((B, bank.count))
    status = np.zeros(B, dtype=np.int64)
    kernels.eval_programs(bank.code, bank.starts, bank.consts,
                          env2, out, status)
    return out, status


def drift_values(spec, x, u, a):
    """f(x, u, a) row-wise for stacked points; returns (B, n) + status."""
    env = np.hstack([np.atleast_2d(x), np.atleast_2d(u), np.atleast_2d(a)])
    vals, status = run_bank(spec.drift_bank, env)
    return vals, status


def impulse_values(spec, x, u):
    """g_k(x, u) for stacked points; returns (B, m, n) + status."""
    env = np.hstack([np.atleast_2d(x), np.atleast_2d(u)])
    vals, status = run_bank(spec.impulse_bank, env)
    return vals.reshape(env.shape[0], spec.m, spec.n), status


def cost_gradient_values(spec, x, u):
    """Gradient of the terminal cost in (x, u); returns (B, n+m) + status."""
    env = np.hstack([np.atleast_2d(x), np.atleast_2d(u)])
    return run_bank(spec.cost_gradient_bank, env)


# --- symbolic Lie brackets on the augmented state ---

def lie_bracket(spec, first, second):
    """Symbolic bracket of two augmented fields, as another AugField.

    Convention: the bracket of A followed by B is (DB) A - (DA) B, i.e.
    the second-order displacement of the flow commutator of A and B.
    Derivatives are taken in the augmented state only; the ordinary
    control enters as a passive parameter.
    """
    key = (first.label, second.label)
    cached = spec._bracket_cache.get(key)
    if cached is not None:
        return cached
    names = spec.state_names
    comps = []
    for i in range(spec.n + spec.m):
        acc = Num(0.0)
        bi = second.components[i]
        ai = first.components[i]
        for c, nm in enumerate(names):
            term = Sub(Mul(diff(bi, nm), first.components[c]),
                       Mul(diff(ai, nm), second.components[c]))
            acc = Add(acc, term)
        comps.append(fold(acc))
    uses = first.uses_ordinary or second.uses_ordinary
    result = AugField(f"[{first.label},{second.label}]", tuple(comps), uses)
    spec._bracket_cache[key] = result
    return result


def eval_field(spec, aug, x, u, a=None):
    """Evaluate an augmented field at a point (tree interpreter)."""
    env = spec.environment(x, u, a)
    return np.array([evaluate(c, env) for c in aug.components])


@dataclass
class PairBracketResult:
    """Worst bracket magnitude found for one pair of impulse fields."""

    fields: tuple
    max_norm: float
    argmax: np.ndarray
    checked: int
    skipped: int


@dataclass
class CommutativityReport:
    passed: bool
    tol: float
    samples: int
    pairs: list

    def to_json_dict(self):
        return {
            "check": "commutativity",
            "pass": bool(self.passed),
            "tol": self.tol,
            "samples": self.samples,
            "pairs": [
                {
                    "fields": list(p.fields),
                    "max_norm": p.max_norm,
                    "argmax": [float(v) for v in p.argmax],
                    "checked": p.checked,
                    "skipped": p.skipped,
                }
                for p in self.pairs
            ],
        }


def check_commutativity(spec, samples=200, tol=1e-8, box_radius=1.0):
    """Estimate max |[g_i, g_j]| over a sample box around x0 crossed with U.

    Sampling is a deterministic low-discrepancy sweep.  Points where a
    field evaluation hits a domain error are skipped and counted; the
    audit never aborts on them.
    """
    N = spec.n + spec.m
    lo = np.concatenate([spec.x0 - box_radius, spec.U[:, 0]])
    hi = np.concatenate([spec.x0 + box_radius, spec.U[:, 1]])
    pts = map_to_box(halton(samples, N), lo, hi)
    pairs = []
    ok_all = True
    for i in range(spec.m):
        for j in range(i + 1, spec.m):
            bracket = lie_bracket(spec, spec.aug_impulse(i),
                                  spec.aug_impulse(j))
            bank = compile_bank(list(bracket.components), spec.state_names)
            out = np.empty((samples, N))
            status = np.zeros(samples, dtype=np.int64)
            kernels.eval_programs(bank.code, bank.starts, bank.consts,
                                  pts, out, status)
            ok = status == 0
            skipped = int((~ok).sum())
            if skipped == samples:
                pairs.append(PairBracketResult(
                    (i + 1, j + 1), float("nan"), pts[0], 0, skipped))
                ok_all = False
                continue
            norms = np.abs(out[ok]).max(axis=1)
            worst = int(np.argmax(norms))
            max_norm = float(norms[worst])
            pairs.append(PairBracketResult(
                (i + 1, j + 1), max_norm, pts[np.flatnonzero(ok)[worst]],
                int(ok.sum()), skipped))
            if not max_norm <= tol:
                ok_all = False
    return CommutativityReport(ok_all, tol, samples, pairs)
