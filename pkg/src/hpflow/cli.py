"""``hpf`` command line: solve, validate, oracle.

Exit codes: 0 converged (or valid), 2 solver did not converge, 1 input error.
"""

import argparse
import logging
import sys

import numpy as np

from . import io as hio
from .exceptions import (
    ConvergenceError,
    HpfError,
    ResourceEvaluationError,
    SingularJacobianError,
)

EXIT_OK, EXIT_INPUT, EXIT_NOT_CONVERGED = 0, 1, 2
log = logging.getLogger("hpflow")


class _Parser(argparse.ArgumentParser):
    # bad arguments are input errors (exit 1); argparse would use 2
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _parser():
    p = _Parser(prog="hpf", description="Harmonic power flow for grids with converter-interfaced resources.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="run a harmonic power flow")
    s.add_argument("--grid", required=True)
    s.add_argument("--ciders", required=True)
    s.add_argument("--sources")
    s.add_argument("--hmax", type=int, default=25)
    s.add_argument("--tol", type=float, default=1e-8)
    s.add_argument("--max-iter", type=int, default=50)
    s.add_argument("--out", help="spectrum CSV")
    s.add_argument("--log", help="convergence log (JSON lines)")
    s.add_argument("--per-unit", action="store_true", help="treat all input files as per-unit")

    v = sub.add_parser("validate", help="check a grid file")
    v.add_argument("--grid", required=True)
    v.add_argument("--hmax", type=int, default=None)

    o = sub.add_parser("oracle", help="time-domain steady state of one CIDER")
    o.add_argument("--cider", required=True)
    o.add_argument("--disturbance", required=True)
    o.add_argument("--out", required=True, help="waveform CSV")
    o.add_argument("--steps", type=int, default=4096)
    return p


def _solve(args):
    from .solver import solve_hpf

    try:
        cfg = hio.StudyConfig(
            grid=args.grid, ciders=args.ciders, sources=args.sources, h_max=args.hmax,
            tol=args.tol, max_iter=args.max_iter, out=args.out, log=args.log, per_unit=args.per_unit,
        )
        problem = hio.load_study(cfg)
    except HpfError as exc:
        print(f"hpf: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        sol = solve_hpf(problem, tol=cfg.tol, max_iter=cfg.max_iter)
    except (SingularJacobianError, ResourceEvaluationError, ConvergenceError) as exc:
        print(f"hpf: solver failed: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    try:
        hio.emit_report(sol, problem, cfg.out, cfg.log)
    except OSError as exc:
        print(f"hpf: cannot write output: {exc}", file=sys.stderr)
        return EXIT_INPUT
    state = "converged" if sol.converged else "NOT converged"
    print(f"{state} after {sol.iterations} iterations, residual {sol.residual:.3e} p.u.")
    return EXIT_OK if sol.converged else EXIT_NOT_CONVERGED


def _validate(args):
    from .grid import validate_grid

    try:
        grid = hio.load_grid(args.grid)
        report = validate_grid(grid, args.hmax)
    except HpfError as exc:
        print(f"hpf: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    print(report)
    return EXIT_OK if report.ok else EXIT_INPUT


def _oracle(args):
    from .oracle import cider_oracle, dump_waveform_csv

    try:
        dist = hio.load_disturbance(args.disturbance)
        specs = hio.load_ciders(args.cider, dist.bases)
        if len(specs) != 1:
            raise hio.StudyError(f"{args.cider}: expected exactly one CIDER, found {len(specs)}")
        model = specs[0].build()
        W = dist.signal(model.disturbance_quantity)
    except HpfError as exc:
        print(f"hpf: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        Y, rec = cider_oracle(model, W, n_steps=args.steps)
    except HpfError as exc:
        print(f"hpf: oracle failed: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    q = model.output_quantity
    scale = dist.bases.v if q == "V" else dist.bases.i_base
    try:
        dump_waveform_csv(args.out, rec.t, rec.y * scale, [f"{q}_{ph}" for ph in "abc"])
    except OSError as exc:
        print(f"hpf: cannot write output: {exc}", file=sys.stderr)
        return EXIT_INPUT
    mags = 2 * np.abs(Y.coeffs[Y.H.h_max + 1 :, 0])
    print(f"settled (deviation {rec.deviation:.2e}); phase a {q} harmonic peaks (p.u.):")
    for h, m in enumerate(mags, start=1):
        if m > 1e-9:
            print(f"  h={h}: {m:.6g}")
    return EXIT_OK


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    handler = {"solve": _solve, "validate": _validate, "oracle": _oracle}[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
