"""Command-line experiment harness.

Every subcommand writes CSV (or JSON) to ``--out`` or standard output.  A
solver run that does not converge is a table row (``iterations = -1``,
``converged = false``), not an error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time

import numpy as np

from . import krylov, problems, saddle, spectra

log = logging.getLogger("gltsaddle")

SOLVE_HEADER = ("problem", "alpha", "n", "N", "solver", "preconditioner", "inner",
                "iterations", "converged", "final_residual", "time")


def _int_list(text):
    return [int(t) for t in _split(text)]


def _float_list(text):
    return [float(t) for t in _split(text)]


def _split(text):
    return [t for t in str(text).replace(",", " ").split() if t]


def _pair(text):
    vals = _float_list(text)
    if len(vals) != 2:
        raise argparse.ArgumentTypeError(f"expected two numbers, got {text!r}")
    return tuple(vals)


def _emit(args, rows=None, header=None, doc=None):
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        if doc is not None or args.format == "json":
            payload = doc if doc is not None else [{k: _plain(r[k]) for k in header} for r in rows]
            json.dump(payload, fh, indent=2, default=_plain)
            fh.write("\n")
        else:
            spectra.write_csv(rows, header, fh)
    finally:
        if args.out:
            fh.close()


def _plain(x):
    if isinstance(x, (np.floating, float)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    return x


# -- subcommands ------------------------------------------------------------

def cmd_bounds(args):
    b = spectra.interval_bounds(args.alpha[0], args.grid)
    doc = {"alpha": args.alpha[0], "grid": args.grid}
    for l in range(3):
        doc[f"m{l + 1}"], doc[f"M{l + 1}"] = float(b[l, 0]), float(b[l, 1])
    _emit(args, doc=doc)


def cmd_count(args):
    alpha = args.alpha[0]
    bounds = spectra.interval_bounds(alpha, args.grid)
    rows = []
    for n in args.n:
        t0 = time.perf_counter()
        rep = spectra.spectral_report(n, alpha, bounds=bounds, intervals=(1,), method=args.method)
        log.info("n=%d counted in %.1f s", n, time.perf_counter() - t0)
        rows.append(rep.table_row())
    _emit(args, rows, spectra.TABLE1_HEADER)


def cmd_match(args):
    rows = []
    for n in args.n:
        rows.extend(spectra.match_blocks(n, args.alpha[0]))
    _emit(args, rows, spectra.MATCH_HEADER)


def cmd_sample(args):
    _emit(args, spectra.sampling_rows(spectra.sample_symbol(args.alpha[0], args.grid)),
          spectra.SAMPLING_HEADER)


def cmd_spectrum(args):
    alpha = args.alpha[0]
    bounds = spectra.interval_bounds(alpha, args.grid)
    rows = []
    for n in args.n:
        B = saddle.permute_to_block_toeplitz(saddle.build_system(n, alpha))
        for r in spectra.spectrum_rows(spectra.full_spectrum(B), bounds):
            rows.append({"n": n, **r})
    _emit(args, rows, ("n",) + spectra.SPECTRUM_HEADER)


def _system(args, n, alpha):
    y_d, z = problems.problem_data(args.problem)
    return saddle.build_system(n, alpha, args.problem, y_d, z, c=args.c, r=args.r,
                               yd_mode=args.yd_mode)


def solve_row(sys_, problem, variant, solver, inner, inner_tol, tol, maxit):
    """Solve one configuration and return a :data:`SOLVE_HEADER` row."""
    v = saddle.canonical_variant(variant)
    A, b = sys_.target(v)
    t0 = time.perf_counter()
    P = saddle.make_preconditioner(sys_, v, inner=inner, tol=inner_tol)
    run = krylov.gmres if solver == "gmres" else krylov.fgmres
    try:
        res = run(A, b, M=P.apply, tol=tol, maxit=maxit)
        iters, conv, final = res.iterations, bool(res.converged), res.final_residual
    except (saddle.InnerSolveError, krylov.KrylovBreakdown) as exc:
        log.warning("%s/%s failed at N=%d: %s", solver, v, sys_.N, exc)
        iters, conv, final = -1, False, float("nan")
    elapsed = time.perf_counter() - t0
    return {"problem": problem, "alpha": sys_.alpha, "n": sys_.n, "N": sys_.N, "solver": solver,
            "preconditioner": v, "inner": inner, "iterations": iters if conv else -1,
            "converged": conv, "final_residual": final,
            "time": elapsed if conv else float("nan")}


def cmd_solve(args):
    rows = []
    for alpha in args.alpha:
        for n in args.n:
            sys_ = _system(args, n, alpha)
            for prec in args.prec:
                rows.append(solve_row(sys_, args.problem, prec, args.solver, args.inner,
                                      args.inner_tol, args.tol, args.maxit))
    _emit(args, rows, SOLVE_HEADER)


def cmd_precheck(args):
    n, alpha = args.n[0], args.alpha[0]
    sys_ = saddle.build_system(n, alpha)
    out = []
    for prec in args.prec:
        chk = spectra.preconditioned_spectrum_check(sys_, prec)
        nu = chk.non_unit
        doc = {"n": n, "alpha": alpha, "variant": saddle.canonical_variant(prec),
               "N": sys_.N, "unit_count": chk.unit_count, "non_unit_count": int(nu.size),
               "non_unit_min": float(nu.real.min()) if nu.size else None,
               "non_unit_max": float(nu.real.max()) if nu.size else None,
               "max_imag": float(np.abs(chk.eigenvalues.imag).max())}
        if chk.oracle.size:
            doc["oracle_max"] = float(chk.oracle.real.max())
        out.append(doc)
    _emit(args, doc=out if len(out) > 1 else out[0])


def cmd_export(args):
    sys_ = _system(args, args.n[0], args.alpha[0])
    stem = args.out or f"saddle_n{sys_.n}"
    saddle.export_matrix(f"{stem}_A.mtx", sys_.A, comment=f"scaled saddle matrix alpha={sys_.alpha}")
    saddle.export_vector(f"{stem}_b.mtx", sys_.b)
    saddle.export_matrix(f"{stem}_B.mtx", saddle.permute_to_block_toeplitz(sys_))
    print(stem)


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--n", type=_int_list, default=[10],
                        help="interior nodes per side, comma separated list")
    common.add_argument("--alpha", type=_float_list, default=[1e-4],
                        help="regularization parameter(s), comma separated")
    common.add_argument("--grid", type=int, default=3000, help="symbol sampling grid size")
    common.add_argument("--out", default=None, help="output file (default: stdout)")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("-v", "--verbose", action="store_true")

    solve = argparse.ArgumentParser(add_help=False)
    solve.add_argument("--problem", choices=sorted(problems.PROBLEMS), default="poisson")
    solve.add_argument("--c", type=_pair, default=(2.0, 3.0), help="convection vector, e.g. 2,3")
    solve.add_argument("--r", type=float, default=1.0, help="reaction coefficient")
    solve.add_argument("--prec", type=_split, default=["pn"],
                       help="preconditioner(s): none, pn, pbct, pd, ptilde")
    solve.add_argument("--solver", choices=("gmres", "fgmres"), default="gmres")
    solve.add_argument("--inner", choices=("direct", "iterative"), default="direct")
    solve.add_argument("--inner-tol", type=float, default=1e-8)
    solve.add_argument("--tol", type=float, default=1e-6)
    solve.add_argument("--maxit", type=int, default=100)
    solve.add_argument("--yd-mode", choices=("load", "interpolate"), default="load",
                       help="how the desired state enters the right-hand side")

    p = argparse.ArgumentParser(prog="gltsaddle", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("bounds", parents=[common], help="symbol interval bounds (JSON)").set_defaults(func=cmd_bounds)
    c = sub.add_parser("count", parents=[common], help="eigenvalue counts in the second interval")
    c.add_argument("--method", choices=("auto", "dense", "banded"), default="auto")
    c.set_defaults(func=cmd_count)
    sub.add_parser("match", parents=[common], help="match eigenvalues to symbol samples").set_defaults(func=cmd_match)
    sub.add_parser("sample", parents=[common], help="sorted eigenvalue-function samples").set_defaults(func=cmd_sample)
    sub.add_parser("spectrum", parents=[common], help="spectrum with interval flags").set_defaults(func=cmd_spectrum)
    sub.add_parser("solve", parents=[common, solve], help="iteration table").set_defaults(func=cmd_solve)
    sub.add_parser("precheck", parents=[common, solve], help="dense preconditioned spectrum (JSON)").set_defaults(func=cmd_precheck)
    sub.add_parser("export", parents=[common, solve], help="write MatrixMarket files").set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        for prec in getattr(args, "prec", []):
            saddle.canonical_variant(prec)
        if any(n < 1 for n in args.n) or any(a <= 0 for a in args.alpha):
            raise ValueError("--n and --alpha must be positive")
        args.func(args)
    except (ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
