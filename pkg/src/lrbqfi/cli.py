"""Command-line front end: ``lrbqfi {lightcone,certify,fisher-scan,receiver}``.

Exit codes: 0 success, 1 a certified bound (or the velocity fit) failed,
2 usage or validation error. Output files go to ``--out`` (a directory),
defaulting to ``$LRBQFI_OUT_DIR`` or the current directory.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from typing import List, Optional

import numpy as np

from . import fisher, lrb, xy_analytic
from .dynamics import OPEN, PERIODIC, Propagator, build_xy_hamiltonian
from .hilbert import LocalOperatorSpec

OUT_ENV = "LRBQFI_OUT_DIR"
EXIT_OK, EXIT_SCIENCE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def _write_atomic(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _out_dir(args) -> str:
    out = args.out or os.environ.get(OUT_ENV) or "."
    if os.path.exists(out) and not os.path.isdir(out):
        raise UsageError(f"--out must be a directory, got file {out!r}")
    if not os.path.exists(out):
        try:
            os.makedirs(out)
        except OSError as exc:
            raise UsageError(f"cannot create output directory {out!r}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise UsageError(f"output directory {out!r} is not writable")
    return out


def _rows_to_text(columns: List[str], rows: List[list], fmt: str) -> str:
    if fmt == "json":
        recs = [dict(zip(columns, r)) for r in rows]
        return json.dumps(recs, indent=1) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(v) if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def _theta_grid(args) -> np.ndarray:
    if args.thetas is not None:
        try:
            vals = [float(v) for v in args.thetas.split(",") if v.strip()]
        except ValueError as exc:
            raise UsageError(f"bad --thetas list: {exc}") from exc
        if not vals:
            raise UsageError("theta grid is empty")
        return np.array(vals)
    if args.steps is None or args.steps < 1:
        raise UsageError("theta grid is empty (give --thetas or --steps >= 1)")
    lo, hi = args.theta_min, args.theta_max
    if hi < lo:
        raise UsageError("--theta-max must not be below --theta-min")
    if args.steps == 1:
        return np.array([lo])
    if lo == -hi:
        # build the positive half and mirror it so +theta and -theta are exact negatives
        full = np.linspace(lo, hi, args.steps)
        half = -full[: args.steps // 2]
        mid = [0.0] if args.steps % 2 else []
        return np.concatenate([-half, mid, half[::-1]])
    return np.linspace(lo, hi, args.steps)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_lightcone(args) -> int:
    if args.n_max < 1:
        raise UsageError("--n-max must be at least 1")
    if not args.t_max > 0 or not args.dt > 0:
        raise UsageError("--t-max and --dt must be positive")
    if not 0 < args.threshold < 4:
        raise UsageError("--threshold must lie in (0, 4)")
    out = _out_dir(args)
    steps = int(round(args.t_max / args.dt))
    if abs(steps * args.dt - args.t_max) > 1e-9 * max(1.0, args.t_max):
        raise UsageError("--t-max must be an integer multiple of --dt")
    grid = xy_analytic.lightcone_grid((0, args.n_max), (0.0, args.t_max), steps, workers=args.workers)
    if args.format == "json":
        text = json.dumps({"n": grid.n_values.tolist(), "t": grid.t_values.tolist(),
                           "value": grid.values.tolist()}) + "\n"
        grid_path = os.path.join(out, "lightcone_grid.json")
    else:
        text = grid.to_csv()
        grid_path = os.path.join(out, "lightcone_grid.csv")
    _write_atomic(grid_path, text)
    try:
        fit = lrb.fit_velocity(grid, args.threshold, n_min=args.fit_n_min)
    except lrb.VelocityFitError as exc:
        print(f"velocity fit failed: {exc}", file=sys.stderr)
        return EXIT_SCIENCE
    _write_atomic(os.path.join(out, "velocity_fit.json"), fit.to_json(indent=1) + "\n")
    print(f"v = {fit.v:.6f}  intercept = {fit.intercept:.6f}  rms = {fit.residual:.3e}")
    return EXIT_OK


def cmd_certify(args) -> int:
    if args.N < 2:
        raise UsageError("--N must be at least 2")
    if args.N > lrb.DENSE_QUBIT_LIMIT and not args.approx_norm:
        raise UsageError(
            f"--N {args.N} exceeds the exact-norm limit of {lrb.DENSE_QUBIT_LIMIT}; "
            "pass --approx-norm for the matrix-free estimate"
        )
    if args.N > lrb.APPROX_QUBIT_LIMIT:
        raise UsageError(f"--N above {lrb.APPROX_QUBIT_LIMIT} is not supported")
    if args.trials is not None and args.trials < 1:
        raise UsageError("--trials must be positive")
    if args.trials is not None and args.N > lrb.DENSE_QUBIT_LIMIT:
        raise UsageError("the randomized suite needs the exact path (--N <= 10)")
    if args.t < 0 or args.t_max < 0:
        raise UsageError("times must be non-negative")
    out = _out_dir(args)

    if args.trials is not None:
        reports = lrb.run_certification_suite(args.trials, args.seed, n_max=args.N, t_max=args.t_max,
                                              workers=args.workers, tol=math.inf)
    else:
        receiver = args.N - 1 if args.receiver is None else args.receiver
        if not (0 <= args.source < args.N and 0 <= receiver < args.N) or args.source == receiver:
            raise UsageError("source and receiver must be distinct sites inside the register")
        cfg = lrb.BoundConfig(args.N, args.source, receiver, args.t, args.theta, args.axis,
                              args.boundary, "zeros", args.seed,
                              "lanczos" if args.approx_norm else "dense")
        reports = [lrb.certify_bound(cfg, tol=math.inf, with_cfi=not args.approx_norm)]

    if args.format == "json":
        text = json.dumps([r.to_dict() for r in reports], indent=1) + "\n"
        path = os.path.join(out, "certify.json")
    else:
        text = lrb.suite_to_csv(reports)
        path = os.path.join(out, "certify.csv")
    _write_atomic(path, text)

    bad = [r for r in reports if r.slack < -lrb.BOUND_TOL]
    for r in bad:
        print(f"bound violated (slack {r.slack:.3e}): {json.dumps(r.config, sort_keys=True)}",
              file=sys.stderr)
    print(f"{len(reports)} configuration(s), min slack {min(r.slack for r in reports):.3e}")
    return EXIT_SCIENCE if bad else EXIT_OK


def cmd_fisher_scan(args) -> int:
    thetas = _theta_grid(args)
    if args.N < 2 or not (0 <= args.source < args.N and 0 <= args.receiver < args.N) \
            or args.source == args.receiver:
        raise UsageError("need N >= 2 and distinct source/receiver inside the register")
    if args.N > lrb.DENSE_QUBIT_LIMIT:
        raise UsageError(f"fisher-scan uses the dense path (--N <= {lrb.DENSE_QUBIT_LIMIT})")
    if not 1e-7 <= args.delta <= 1e-3:
        raise UsageError("--delta must lie in [1e-7, 1e-3]")
    out = _out_dir(args)
    prop = Propagator.dense(build_xy_hamiltonian(args.N, args.boundary))
    pipe = fisher.ImpulsePipeline(prop, LocalOperatorSpec(args.source, args.axis), args.receiver)
    rows = []
    for th in thetas:
        th = float(th)
        qfi = pipe.qfi(th, args.t)
        at = th if abs(th) >= args.theta_min_cfi else math.copysign(args.theta_min_cfi, th or 1.0)
        cfi = pipe.cfi(at, args.t, delta=args.delta)
        ratio = cfi / qfi if qfi > 0 else float("nan")
        rows.append([th, qfi, cfi, ratio])
    text = _rows_to_text(["theta", "qfi", "cfi", "ratio"], rows, args.format)
    _write_atomic(os.path.join(out, f"fisher_scan.{args.format}"), text)
    return EXIT_OK


def cmd_receiver(args) -> int:
    if args.n < 1:
        raise UsageError("--n must be at least 1")
    if args.t < 0:
        raise UsageError("--t must be non-negative")
    thetas = _theta_grid(args)
    if 2 * args.t > xy_analytic.BESSEL_MAX_ARG or args.n > xy_analytic.BESSEL_MAX_ORDER:
        raise UsageError("n and 2t must stay within the Bessel window (500)")
    out = _out_dir(args)
    dominant = xy_analytic.dominant_eigenvalue_curve(args.t, args.n, thetas)
    rows = []
    for th, lam in zip(thetas, dominant):
        rho = xy_analytic.receiver_closed_form(float(th), args.t, args.n).matrix
        rows.append([float(th), float(rho[0, 0].real), float(rho[0, 1].real), float(rho[0, 1].imag),
                     float(rho[1, 1].real), float(lam)])
    cols = ["theta", "rho00", "rho01_re", "rho01_im", "rho11", "dominant_eigenvalue"]
    _write_atomic(os.path.join(out, f"receiver.{args.format}"), _rows_to_text(cols, rows, args.format))
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lrbqfi",
        description="Receiver Fisher information versus the Lieb-Robinson commutator bound.",
        epilog=f"Output directory defaults to ${OUT_ENV}, else the current directory.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or .)")
        p.add_argument("--format", choices=["csv", "json"], default="csv")
        p.add_argument("--seed", type=int, default=7, help="master seed (default 7)")
        p.add_argument("--config", help="JSON file of option values; flags take precedence")

    p = sub.add_parser("lightcone", help="4 J_n(2t)^2 grid and front-velocity fit")
    common(p)
    p.add_argument("--n-max", type=int, default=100)
    p.add_argument("--t-max", type=float, default=100.0)
    p.add_argument("--dt", type=float, default=0.1)
    p.add_argument("--threshold", type=float, default=1e-4)
    p.add_argument("--fit-n-min", type=int, default=lrb.FIT_N_MIN)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_lightcone)

    p = sub.add_parser("certify", help="check QFI <= 4||C(t)||^2")
    common(p)
    p.add_argument("--N", type=int, default=6, help="register size (max size for --trials)")
    p.add_argument("--source", type=int, default=0)
    p.add_argument("--receiver", type=int, default=None, help="default: last site")
    p.add_argument("--axis", choices=["x", "y", "z"], default="x")
    p.add_argument("--t", type=float, default=1.0)
    p.add_argument("--theta", type=float, default=0.0)
    p.add_argument("--boundary", choices=[OPEN, PERIODIC], default=OPEN)
    p.add_argument("--trials", type=int, default=None, help="run the randomized suite instead")
    p.add_argument("--t-max", type=float, default=3.0, help="time range for random trials")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--approx-norm", action="store_true",
                   help="matrix-free Lanczos for ||C|| (needed above N=10)")
    p.set_defaults(func=cmd_certify)

    def theta_opts(p, lo, hi, steps):
        p.add_argument("--thetas", help="comma-separated theta values")
        p.add_argument("--theta-min", type=float, default=lo)
        p.add_argument("--theta-max", type=float, default=hi)
        p.add_argument("--steps", type=int, default=steps, help="number of theta points")

    p = sub.add_parser("fisher-scan", help="QFI and z-basis CFI along a theta grid")
    common(p)
    p.add_argument("--N", type=int, default=9)
    p.add_argument("--source", type=int, default=0)
    p.add_argument("--receiver", type=int, default=4)
    p.add_argument("--axis", choices=["x", "y", "z"], default="x")
    p.add_argument("--t", type=float, default=1.0)
    p.add_argument("--boundary", choices=[OPEN, PERIODIC], default=OPEN)
    p.add_argument("--delta", type=float, default=fisher.CFI_DELTA, help="CFI finite-difference step")
    p.add_argument("--theta-min-cfi", type=float, default=fisher.THETA_MIN,
                   help="CFI is evaluated at no smaller |theta| than this")
    theta_opts(p, 0.0, 0.1, 11)
    p.set_defaults(func=cmd_fisher_scan)

    p = sub.add_parser("receiver", help="closed-form receiver matrix and dominant eigenvalue")
    common(p)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--t", type=float, default=52.0)
    theta_opts(p, -math.pi, math.pi, 629)
    p.set_defaults(func=cmd_receiver)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: List[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not args.config:
        return args
    try:
        with open(args.config) as fh:
            cfg = json.load(fh)
    except (OSError, ValueError) as exc:
        parser.error(f"cannot read --config {args.config!r}: {exc}")
    if not isinstance(cfg, dict):
        parser.error("--config must hold a JSON object")
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in sub._actions}
    unknown = set(k.replace("-", "_") for k in cfg) - known
    if unknown:
        parser.error(f"unknown keys in --config: {sorted(unknown)}")
    sub.set_defaults(**{k.replace("-", "_"): v for k, v in cfg.items()})
    return parser.parse_args(argv)


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = _apply_config(parser, argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except lrb.BoundViolation as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_SCIENCE
    except OSError as exc:
        print(f"{parser.prog} {args.command}: cannot write output: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
