"""Command-line front end.

Subcommands map one-to-one onto the library: validate (system file +
commutativity audit), flowbox (straightening residual audit), simulate
(impulsive trajectory file), adjoint (costate file), certify (condition
report), robustness (input-output stability table), approx
(mollification convergence table).

Output is deterministic: reals print with 17 significant digits, lines
end with LF, and reports are JSON with two-space indentation, so two
runs with identical inputs and seeds are byte-identical.  Exit codes:
0 success/pass, 1 a check failed, 2 bad input.
"""

import argparse
import json
import os
import sys

import numpy as np

from .adjoint import pull_back_adjoint, solve_transformed_adjoint
from .certify import CertifyOptions, certify
from .errors import FlowboxError, ValidationError
from .propagate import (approximation_check, integrate_impulsive,
                        robustness_gap)
from .signals import (constant_ordinary, load_control, load_ordinary,
                      piecewise_linear)
from .system import check_commutativity, load_system_file
from .transform import TransformContext, verify_flowbox


def _fmt(value):
    return "%.17g" % float(value)


def _write_text(path, text):
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def _write_report(doc, path):
    _write_text(path, json.dumps(doc, indent=2) + "\n")


def _read_json_file(path, what):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ValidationError(f"cannot read {what} file: {exc}")
    return text


def _apply_thread_cap():
    cap = os.environ.get("IMPULSE_THREADS")
    if not cap:
        return
    try:
        import numba
        numba.set_num_threads(max(1, int(cap)))
    except Exception:
        pass  # a cap, not a requirement; kernels run serially anyway


# --- tabular emitters --------------------------------------------------------

def _emit_rows(header, rows, path, fmt):
    if fmt == "csv":
        lines = [",".join(header)]
        lines.extend(",".join(_fmt(v) for v in row) for row in rows)
        _write_text(path, "\n".join(lines) + "\n")
    else:
        if not rows:
            _write_text(path, "[]\n")
            return
        parts = []
        for row in rows:
            fields = ", ".join(f'"{h}": {_fmt(v)}'
                               for h, v in zip(header, row))
            parts.append("  {" + fields + "}")
        _write_text(path, "[\n" + ",\n".join(parts) + "\n]\n")


def emit_trajectory(traj, path, fmt="csv"):
    """Write a trajectory table; jump nodes emit a pure-left and a
    pure-right row sharing the same t."""
    n, m = traj.n, traj.m
    l = traj.a_left.shape[1]
    header = (["t"]
              + [f"x{i + 1}_left" for i in range(n)]
              + [f"x{i + 1}_right" for i in range(n)]
              + [f"u{j + 1}_left" for j in range(m)]
              + [f"u{j + 1}_right" for j in range(m)]
              + [f"xi{i + 1}" for i in range(n)]
              + [f"a{q + 1}" for q in range(l)])

    def row(k, x, u, a):
        return ([traj.t[k]] + list(x) + list(x) + list(u) + list(u)
                + list(traj.xi[k]) + list(a))

    rows = []
    jumps = traj.jump_mask()
    for k in range(len(traj.t)):
        if jumps[k]:
            rows.append(row(k, traj.x_left[k], traj.u_left[k],
                            traj.a_left[k]))
            rows.append(row(k, traj.x_right[k], traj.u_right[k],
                            traj.a_right[k]))
        else:
            rows.append(row(k, traj.x_point[k], traj.u_point[k],
                            traj.a_right[k]))
    _emit_rows(header, rows, path, fmt)


def emit_adjoint(arc, path, fmt="csv"):
    """Write a costate table; the pulled-back p carries both one-sided
    values as columns."""
    if arc.p1_left is None:
        raise ValidationError("adjoint arc has not been pulled back")
    n = arc.pi1.shape[1]
    m = arc.pi2.shape[1]
    header = (["t"]
              + [f"pi1_{i + 1}" for i in range(n)]
              + [f"pi2_{j + 1}" for j in range(m)]
              + [f"p1_{i + 1}_left" for i in range(n)]
              + [f"p1_{i + 1}_right" for i in range(n)]
              + [f"p2_{j + 1}_left" for j in range(m)]
              + [f"p2_{j + 1}_right" for j in range(m)])
    rows = []
    for k in range(len(arc.t)):
        rows.append([arc.t[k]] + list(arc.pi1[k]) + list(arc.pi2[k])
                    + list(arc.p1_left[k]) + list(arc.p1_right[k])
                    + list(arc.p2_left[k]) + list(arc.p2_right[k]))
    _emit_rows(header, rows, path, fmt)


# --- signal loading -----------------------------------------------------------

def load_signals(spec, control_path, ordinary_path):
    """Load and validate the (impulse, ordinary) control pair."""
    u = load_control(_read_json_file(control_path, "control"), spec)
    a = load_ordinary(_read_json_file(ordinary_path, "ordinary control"),
                      spec)
    return u, a


def _default_ordinary(spec):
    mid = 0.5 * (spec.A[:, 0] + spec.A[:, 1])
    return constant_ordinary(spec.T, mid)


# --- subcommand handlers -------------------------------------------------------

def _cmd_validate(args):
    spec = load_system_file(args.system)
    report = check_commutativity(spec, samples=args.samples, tol=args.tol,
                                 box_radius=args.box_radius)
    _write_report(report.to_json_dict(), args.out)
    return 0 if report.passed else 1


def _cmd_flowbox(args):
    spec = load_system_file(args.system)
    ctx = TransformContext(spec, flow_steps=args.flow_steps)
    report = verify_flowbox(ctx, samples=args.samples, tol=args.tol,
                            box_radius=args.box_radius)
    _write_report(report.to_json_dict(), args.out)
    return 0 if report.passed else 1


def _cmd_simulate(args):
    spec = load_system_file(args.system)
    ctx = TransformContext(spec, flow_steps=args.flow_steps)
    u, a = load_signals(spec, args.control, args.ordinary)
    traj = integrate_impulsive(spec, ctx, u, a, step=args.step)
    emit_trajectory(traj, args.out, args.format)
    return 0


def _cmd_adjoint(args):
    spec = load_system_file(args.system)
    ctx = TransformContext(spec, flow_steps=args.flow_steps)
    u, a = load_signals(spec, args.control, args.ordinary)
    traj = integrate_impulsive(spec, ctx, u, a, step=args.step)
    arc = solve_transformed_adjoint(spec, ctx, traj)
    arc = pull_back_adjoint(spec, ctx, arc, traj)
    emit_adjoint(arc, args.out, args.format)
    return 0


def _cmd_certify(args):
    spec = load_system_file(args.system)
    ctx = TransformContext(spec, flow_steps=args.flow_steps)
    u, a = load_signals(spec, args.candidate_u, args.candidate_a)
    options = CertifyOptions(
        step=args.step, tol=args.tol, grid_u=args.grid_u,
        grid_a=args.grid_a, sigma0=args.sigma0,
        nc1_orientation=args.nc1_orientation,
        check_times=args.check_times,
        variation_times=tuple(args.variation_times),
        extra_directions=args.directions, seed=args.seed)
    report = certify(spec, ctx, u, a, options)
    _write_report(report.to_json_dict(), args.out)
    return 0 if report.overall_pass else 1


def _cmd_robustness(args):
    spec = load_system_file(args.system)
    ctx = TransformContext(spec, flow_steps=args.flow_steps)
    if args.ordinary is not None:
        a = load_ordinary(_read_json_file(args.ordinary,
                                          "ordinary control"), spec)
    else:
        a = _default_ordinary(spec)
    rng = np.random.default_rng(args.seed)
    knots = np.linspace(0.0, spec.T, 9)
    lo, hi = spec.U[:, 0], spec.U[:, 1]
    pairs = []
    for _ in range(args.samples):
        vals = rng.uniform(lo, hi, size=(9, spec.m))
        valsh = rng.uniform(lo, hi, size=(9, spec.m))
        x0 = rng.uniform(spec.x0 - args.box_radius,
                         spec.x0 + args.box_radius)
        x0h = rng.uniform(spec.x0 - args.box_radius,
                          spec.x0 + args.box_radius)
        pairs.append((x0, piecewise_linear(knots, vals), x0h,
                      piecewise_linear(knots, valsh)))
    report = robustness_gap(spec, ctx, pairs, a, step=args.step)
    _write_report(report.to_json_dict(), args.out)
    return 0 if report.passed else 1


def _cmd_approx(args):
    spec = load_system_file(args.system)
    ctx = TransformContext(spec, flow_steps=args.flow_steps)
    u, a = load_signals(spec, args.control, args.ordinary)
    report = approximation_check(spec, ctx, u, a, ks=tuple(args.ks),
                                 step=args.step)
    _write_report(report.to_json_dict(), args.out)
    return 0 if report.passed else 1


# --- parser --------------------------------------------------------------------

def _int_list(text):
    return [int(part) for part in text.split(",") if part.strip()]


def _float_list(text):
    return [float(part) for part in text.split(",") if part.strip()]


def build_parser():
    parser = argparse.ArgumentParser(
        prog="flowbox",
        description="Simulate and certify impulsive control systems "
                    "with commuting impulse fields.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp, fmt=False):
        sp.add_argument("--system", required=True,
                        help="system JSON file")
        sp.add_argument("--out", default=None,
                        help="output path (default: stdout)")
        sp.add_argument("--flow-steps", type=int, default=200,
                        help="integration steps per unit flow time")
        if fmt:
            sp.add_argument("--format", choices=("csv", "json"),
                            default="csv", help="table format")

    sp = sub.add_parser("validate",
                        help="validate a system file and audit "
                             "commutativity")
    common(sp)
    sp.add_argument("--samples", type=int, default=200)
    sp.add_argument("--tol", type=float, default=1e-8)
    sp.add_argument("--box-radius", type=float, default=1.0)
    sp.set_defaults(func=_cmd_validate)

    sp = sub.add_parser("flowbox",
                        help="audit the straightening change of "
                             "coordinates")
    common(sp)
    sp.add_argument("--samples", type=int, default=100)
    sp.add_argument("--tol", type=float, default=1e-6)
    sp.add_argument("--box-radius", type=float, default=1.0)
    sp.set_defaults(func=_cmd_flowbox)

    sp = sub.add_parser("simulate", help="integrate a control pair")
    common(sp, fmt=True)
    sp.add_argument("--control", required=True)
    sp.add_argument("--ordinary", required=True)
    sp.add_argument("--step", type=float, default=None,
                    help="grid step (default T/1000)")
    sp.set_defaults(func=_cmd_simulate)

    sp = sub.add_parser("adjoint",
                        help="integrate and solve the costate")
    common(sp, fmt=True)
    sp.add_argument("--control", required=True)
    sp.add_argument("--ordinary", required=True)
    sp.add_argument("--step", type=float, default=None)
    sp.set_defaults(func=_cmd_adjoint)

    sp = sub.add_parser("certify",
                        help="check every necessary condition on a "
                             "candidate")
    common(sp)
    sp.add_argument("--candidate-u", required=True)
    sp.add_argument("--candidate-a", required=True)
    sp.add_argument("--step", type=float, default=None)
    sp.add_argument("--tol", type=float, default=1e-6)
    sp.add_argument("--grid-u", type=int, default=9)
    sp.add_argument("--grid-a", type=int, default=9)
    sp.add_argument("--sigma0", type=float, default=1e-6)
    sp.add_argument("--nc1-orientation", choices=("derived", "printed"),
                    default="derived")
    sp.add_argument("--check-times", type=int, default=200)
    sp.add_argument("--variation-times", type=_float_list,
                    default=[0.25, 0.5, 0.75],
                    help="comma-separated fractions of T")
    sp.add_argument("--directions", type=int, default=16,
                    help="extra random unit directions")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=_cmd_certify)

    sp = sub.add_parser("robustness",
                        help="input-output gap over random signal "
                             "pairs")
    common(sp)
    sp.add_argument("--ordinary", default=None,
                    help="fixed ordinary control (default: box "
                         "midpoint)")
    sp.add_argument("--samples", type=int, default=50)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--step", type=float, default=None)
    sp.add_argument("--box-radius", type=float, default=1.0)
    sp.set_defaults(func=_cmd_robustness)

    sp = sub.add_parser("approx",
                        help="graph-completion convergence of "
                             "mollified controls")
    common(sp)
    sp.add_argument("--control", required=True)
    sp.add_argument("--ordinary", required=True)
    sp.add_argument("--ks", type=_int_list, default=[10, 20, 40],
                    help="comma-separated mollification indices")
    sp.add_argument("--step", type=float, default=None)
    sp.set_defaults(func=_cmd_approx)
    return parser


def run(argv=None):
    _apply_thread_cap()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except FlowboxError as exc:
        detail = exc.args[0] if exc.args else str(exc)
        path = getattr(exc, "path", "")
        if path:
            detail = f"{detail} (at {path})"
        print(f"error: {detail}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
