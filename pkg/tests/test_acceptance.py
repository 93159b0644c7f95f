"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import math

import numpy as np
import pytest

from fixedstress import biot, cases, fem, harness, mandel, tuning
from fixedstress.fem import FunctionSpace
from fixedstress.mesh import build_unit_square_mesh

DELTA = 1.5


@pytest.fixture
def verdict(capsys):
    def report(number, passed, detail):
        with capsys.disabled():
            print(f"\nCRITERION {number:>2} {'PASS' if passed else 'FAIL'}: {detail}")
        assert passed, detail
    return report


def rel(a, b):
    return fem.inf_norm(a - b) / fem.inf_norm(b)


@pytest.fixture(scope="module")
def catalog_runs():
    """Fixed-stress and monolithic runs of every catalogue case and permeability."""
    runs = []
    for case in cases.TEST_CASES:
        cfg = harness.ExperimentConfig(case)
        consts = harness.estimate_constants(cfg, include_inf_sup=False)
        for kappa in cfg.kappa_list:
            pb = harness.build_problem(cfg, kappa)
            ops = biot.assemble_operators(pb)
            fs_cfg = biot.FixedStressConfig(delta=DELTA, K_dr=consts["K_dr"])
            fs, rep = biot.run_time_stepping(pb, fs_cfg, ops)
            mono, _ = biot.run_time_stepping(pb, ops=ops)
            runs.append(dict(case=case, kappa=kappa, fs=fs, mono=mono, report=rep, consts=consts,
                             L=fs_cfg.stabilization(pb.alpha)))
    return runs


def test_criterion_01_fixed_point_equivalence(catalog_runs, verdict):
    worst, bad = 0.0, []
    for r in catalog_runs:
        err = max(rel(r["fs"][-1].u, r["mono"][-1].u), rel(r["fs"][-1].p, r["mono"][-1].p))
        worst = max(worst, err)
        if not (r["report"].converged and err < 1e-8):
            bad.append((r["case"], r["kappa"]))
    verdict(1, not bad, f"{len(catalog_runs)} runs, worst relative difference {worst:.2e}, failing {bad}")


def test_criterion_02_contraction(catalog_runs, verdict):
    bad, margin = [], math.inf
    for r in catalog_runs:
        for step in r["report"].steps:
            d = np.asarray(step.dp_l2)
            if np.any(d[2:] > d[1:-1]):
                bad.append((r["case"], r["kappa"], "increase"))
        model = harness.rate_model(r["consts"], r["kappa"])
        bound = math.sqrt(tuning.theoretical_rate(model, DELTA, r["L"])) + 0.05
        obs = biot.observed_rate(r["report"])
        margin = min(margin, bound - obs)
        if obs > bound:
            bad.append((r["case"], r["kappa"], obs, bound))
    verdict(2, not bad, f"smallest margin to the bound {margin:.3f}, violations {bad}")


def test_criterion_03_optimal_parameter_interval(verdict):
    rng = np.random.default_rng(3)
    bad = 0
    for _ in range(1000):
        e = rng.uniform
        m = tuning.RateModel(alpha=e(0.05, 1.0), M=10 ** e(-2, 18), tau=10 ** e(-4, 3),
                             kappa=10 ** e(-20, 0), C_omega=10 ** e(-3, 3), beta=10 ** e(-3, 12),
                             K_dr=10 ** e(-3, 12))
        L, d = tuning.optimal_L(m), tuning.optimal_delta(m)
        if not (m.alpha ** 2 / (2 * m.K_dr) <= L <= m.alpha ** 2 / m.K_dr and 1.0 <= d <= 2.0):
            bad += 1
    verdict(3, bad == 0, f"1000 sampled models, {bad} outside the interval")


def test_criterion_04_extreme_limits(verdict):
    parts, ok = [], True
    for case in (cases.UNIT_SQUARE_SETUP1, cases.UNIT_SQUARE_SETUP2):
        cfg = harness.ExperimentConfig(case, kappa_list=(1e-18,))
        consts = dict(harness.estimate_constants(cfg, include_inf_sup=False), M=1e16)
        model = harness.rate_model(consts, 1e-18)
        d_low = tuning.optimal_delta(model)
        d_high = tuning.optimal_delta(harness.rate_model(dict(consts, M=1e6), 1e-6))
        pb = cases.build_case(case, 1e-18, M=1e16)
        _, rep = biot.run_time_stepping(pb, biot.FixedStressConfig(L=model.L_phys, max_iter=200))
        ok &= abs(d_low - 1.0) <= 1e-3 and d_high == 2.0 and rep.converged
        its = rep.total_iterations if rep.converged else ">200"
        parts.append(f"{case}: delta*={d_low:.6f}/{d_high:g}, iterations {its}")
    verdict(4, ok, "; ".join(parts))


def test_criterion_05_monotone_argmin(verdict):
    res = harness.run_sweep(harness.ExperimentConfig(cases.UNIT_SQUARE_SETUP1))
    argmins = [res.argmin(k) for k in res.kappas()]
    ok = res.all_converged and harness.is_nondecreasing(argmins)
    verdict(5, ok, f"argmin over kappa {argmins}")


def test_criterion_06_inf_sup_contrast(verdict):
    tags = ("bottom", "right", "top", "left")
    t = cases.BENCHMARK
    ratios = {}
    for kind in (fem.P2_VECTOR, fem.P1_VECTOR):
        g = []
        for n in (4, 8):
            mesh = build_unit_square_mesh(n)
            est = tuning.estimate_inf_sup(FunctionSpace(mesh, kind), FunctionSpace(mesh, fem.P1_SCALAR),
                                          t.mu, t.lam, tags)
            g.append(est.gamma)
        ratios[kind] = g[0] / g[1]
    stable = 0.8 <= ratios[fem.P2_VECTOR] <= 1.25
    unstable = not 0.8 <= ratios[fem.P1_VECTOR] <= 1.25
    verdict(6, stable and unstable,
            f"gamma(1/4)/gamma(1/8): P2-P1 {ratios[fem.P2_VECTOR]:.3f}, P1-P1 {ratios[fem.P1_VECTOR]:.3f}")


def test_criterion_07_kdr_calibration(verdict):
    found, ok = {}, True
    for case, ref in cases.CALIBRATED_KDR_FACTOR.items():
        res = harness.calibrate_kdr(case)
        found[case] = res.factor
        ok &= abs(res.factor - ref) <= 0.1 + 1e-9
    verdict(7, ok, ", ".join(f"{c}: {v:.2f} (ref {cases.CALIBRATED_KDR_FACTOR[c]})" for c, v in found.items()))


def test_criterion_08_mandel(verdict):
    p = mandel.MANDEL_PARAMETERS
    roots = mandel.mandel_roots(p.nu, p.nu_u, p.n_terms)
    ts = np.random.default_rng(8).uniform(0.0, 1e3, 100)
    p_a = max(abs(float(mandel.mandel_pressure(p, roots, p.a, t))) for t in ts)
    trunc = max(mandel.truncation_check(p, roots, t) for t in (10.0, 50.0))
    resid = float(mandel.root_residual(roots, p.root_slope).max())

    pb = cases.build_case(cases.MANDEL, 1e-10)
    ops = biot.assemble_operators(pb)
    states, _ = biot.run_time_stepping(pb, ops=ops)
    xy = ops.p_space.node_coords
    line = np.isclose(xy[:, 1], p.b / 2)
    order = np.argsort(xy[line, 0])
    x = xy[line, 0][order]
    ph = states[-1].p[line][order]
    pe = mandel.mandel_pressure(p, roots, x, pb.time(states[-1].time_index))
    err = math.sqrt(np.trapezoid((ph - pe) ** 2, x) / np.trapezoid(pe ** 2, x))
    ok = p_a == 0.0 and trunc < 1e-10 and resid < 1e-10 and err < 0.1
    verdict(8, ok, f"max|p(a,t)|={p_a:.1e}, truncation {trunc:.1e}, root residual {resid:.1e}, "
                   f"L2 error at t=50 {err:.2%}")


def test_criterion_09_error_inequality(verdict):
    pb = cases.build_case(cases.UNIT_SQUARE_SETUP1, 1e-12)
    ops = biot.assemble_operators(pb)
    prev = biot.initial_state(pb, ops)
    ref = biot.solve_monolithic_step(ops, pb, prev)
    c = pb.alpha ** 2 / (pb.mu + pb.lam)
    ratios = []

    def check(i, u, p):
        eu, ep = u - ref.u, p - ref.p
        ratios.append((eu @ (ops.A @ eu)) / (c * (ep @ (ops.Mp @ ep)) * (1 + 1e-6)))

    for K in (cases.kdr_value(pb, 1.6), pb.mu + pb.lam):
        cfg = biot.FixedStressConfig(delta=DELTA, K_dr=K)
        biot.solve_fixed_stress_step(ops, pb, prev, cfg, callback=check)
    verdict(9, bool(ratios) and max(ratios) <= 1.0,
            f"{len(ratios)} iterations, largest energy ratio {max(ratios):.3f}")


def test_criterion_10_determinism(tmp_path, verdict):
    cfg = harness.ExperimentConfig(cases.UNIT_SQUARE_SETUP1, kappa_list=(1e-15, 1e-12),
                                   random_mode="M1", num_realizations=20, seed=2024)
    blobs = []
    for run in ("a", "b"):
        paths = harness.emit_outputs(harness.run_randomized(cfg), tmp_path / run)
        blobs.append((paths["csv"].read_bytes(), paths["json"].read_bytes()))
    ok = blobs[0] == blobs[1]
    verdict(10, ok, f"two runs of 20 realizations, CSV {len(blobs[0][0])} bytes, identical={ok}")
