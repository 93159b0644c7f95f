"""Command line entry point ``fsl``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import cases, fem, harness, mandel, tuning
from .mesh import build_unit_square_mesh


def _cmd_run(args) -> int:
    config = harness.load_config(args.config)
    out_dir = args.output_dir or config.output_dir or "fsl-output"
    result = harness.run_sweep(config)
    paths = harness.emit_outputs(result, out_dir)
    for kappa in result.kappas():
        print(f"kappa={kappa:.1e} argmin_delta={result.argmin(kappa):.2f} "
              f"delta_star={result.delta_star(kappa):.4f}")
    print(f"wrote {paths['csv']}, {paths['svg']}, {paths['json']}")
    failed = [c for c in result.cells if not c.converged]
    if failed:
        print(f"{len(failed)} cell(s) did not converge", file=sys.stderr)
        if args.strict:
            return 2
    return 0


def _cmd_calibrate(args) -> int:
    grid = harness._delta_range(f"{args.delta_min}:{args.delta_max}:{args.delta_step}")
    res = harness.calibrate_kdr(args.case, args.disc, args.kappa_min, grid)
    for c, star, emp in res.table:
        print(f"c={c:.2f} delta_star={star:.4f} empirical_argmin={emp:.2f}")
    print(f"selected c={res.factor:.2f} K_dr={res.K_dr:.6e} matched={res.matched}")
    if res.warning:
        print(f"warning: {res.warning}", file=sys.stderr)
    return 0


def mandel_self_check(seed: int = 0) -> list:
    """Analytical checks of the Mandel series as ``(name, passed, detail)`` triples."""
    p = mandel.MANDEL_PARAMETERS
    roots = mandel.mandel_roots(p.nu, p.nu_u, p.n_terms)
    rng = np.random.default_rng(seed)
    ts = rng.uniform(0.0, 1e3, 100)
    p_a = max(abs(float(mandel.mandel_pressure(p, roots, p.a, t))) for t in ts)
    trunc = max(mandel.truncation_check(p, roots, t) for t in (10.0, 50.0))
    res = float(np.max(mandel.root_residual(roots, p.root_slope)))
    return [
        ("pressure vanishes at x = a", p_a == 0.0, f"max |p(a, t)| = {p_a:.3e}"),
        ("doubled truncation agrees", trunc < 1e-10, f"max relative change = {trunc:.3e}"),
        ("root residuals", res < 1e-10, f"max scaled residual = {res:.3e}"),
    ]


def _cmd_mandel_check(args) -> int:
    ok = True
    for name, passed, detail in mandel_self_check(args.seed):
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
    return 0 if ok else 1


def _cmd_infsup(args) -> int:
    n = int(round(1.0 / args.h))
    if n < 1 or abs(n * args.h - 1.0) > 1e-9:
        print("--h must be 1/n for an integer n", file=sys.stderr)
        return 1
    mesh = build_unit_square_mesh(n)
    ukind = fem.P2_VECTOR if args.disc == "p2p1" else fem.P1_VECTOR
    u_space, p_space = fem.FunctionSpace(mesh, ukind), fem.FunctionSpace(mesh, fem.P1_SCALAR)
    tags = ("bottom", "right", "top", "left") if args.setup == 1 else ("bottom", "right", "left")
    t = cases.BENCHMARK
    est = tuning.estimate_inf_sup(u_space, p_space, t.mu, t.lam, tags)
    print(json.dumps({"disc": args.disc, "h": args.h, "gamma": est.gamma,
                      "beta_estimate": est.beta_estimate, "kernel_dim": est.kernel_dim}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fsl", description="Fixed-stress splitting experiments")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a sweep from a key = value config file")
    r.add_argument("--config", required=True)
    r.add_argument("--output-dir")
    r.add_argument("--strict", action="store_true", help="exit 2 if any cell did not converge")
    r.set_defaults(func=_cmd_run)

    c = sub.add_parser("calibrate", help="calibrate K_dr = c mu + lambda")
    c.add_argument("--case", default=cases.UNIT_SQUARE_SETUP1, choices=cases.TEST_CASES)
    c.add_argument("--disc", default="P2P1", choices=harness.DISCRETIZATIONS)
    c.add_argument("--kappa-min", type=float)
    c.add_argument("--delta-min", type=float, default=1.0)
    c.add_argument("--delta-max", type=float, default=2.5)
    c.add_argument("--delta-step", type=float, default=0.05)
    c.set_defaults(func=_cmd_calibrate)

    m = sub.add_parser("mandel-check", help="self-tests of the Mandel series")
    m.add_argument("--seed", type=int, default=0)
    m.set_defaults(func=_cmd_mandel_check)

    i = sub.add_parser("infsup", help="discrete inf-sup constant on the unit square")
    i.add_argument("--disc", choices=("p2p1", "p1p1"), default="p2p1")
    i.add_argument("--h", type=float, default=0.125)
    i.add_argument("--setup", type=int, choices=(1, 2), default=1)
    i.set_defaults(func=_cmd_infsup)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (harness.ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
