import numpy as np
import pytest

from fixedstress import biot, cases, fem, mandel
from fixedstress.biot import (BiotProblem, DisplacementBC, FixedStressConfig, PressureBC)
from fixedstress.mesh import build_unit_square_mesh

TAGS = ("bottom", "right", "top", "left")


def zero_problem(n=4, elements="P2P1", **kw):
    base = dict(mesh=build_unit_square_mesh(n), mu=1.0, lam=1.0, alpha=1.0, M=10.0, kappa=1e-2,
                tau=0.1, T=0.2, elements=elements,
                displacement_bcs=tuple(DisplacementBC(t) for t in TAGS),
                pressure_bcs=tuple(PressureBC(t) for t in TAGS))
    base.update(kw)
    return BiotProblem(**base)


def rel(a, b):
    return fem.inf_norm(a - b) / max(fem.inf_norm(b), 1e-300)


# ---------------------------------------------------------------- validation

@pytest.mark.parametrize("key", ["mu", "lam", "alpha", "M", "kappa", "tau"])
def test_nonpositive_parameters_rejected(key):
    with pytest.raises(ValueError, match=key):
        zero_problem(**{key: 0.0})


def test_step_count_must_be_integral():
    with pytest.raises(ValueError):
        zero_problem(T=0.25)
    with pytest.raises(ValueError):
        zero_problem(elements="P3P2")
    assert zero_problem(T=0.3).num_steps == 3


@pytest.mark.parametrize("kw", [dict(), dict(L=1.0, delta=1.0, K_dr=1.0), dict(delta=1.0),
                                dict(L=-1.0), dict(delta=0.0, K_dr=1.0), dict(L=1.0, max_iter=0)])
def test_fixed_stress_config_rejects(kw):
    with pytest.raises(ValueError):
        FixedStressConfig(**kw)


def test_stabilization_from_delta():
    cfg = FixedStressConfig(delta=1.5, K_dr=4.0)
    assert cfg.stabilization(2.0) == pytest.approx(4.0 / 6.0)
    assert FixedStressConfig(L=0.3).stabilization(7.0) == 0.3
    assert cfg.tol_lin == pytest.approx(1e-15)


def test_initial_vector_shape_checked():
    pb = zero_problem(initial_p=np.zeros(3))
    with pytest.raises(ValueError, match="shape"):
        biot.initial_state(pb, biot.assemble_operators(pb))


# ---------------------------------------------------------------- monolithic

def test_zero_data_gives_zero_solution():
    pb = zero_problem()
    states, rep = biot.run_time_stepping(pb)
    assert rep.method == "monolithic" and rep.iteration_counts == [1, 1]
    assert all(fem.inf_norm(s.u) == 0 and fem.inf_norm(s.p) == 0 for s in states)
    states, rep = biot.run_time_stepping(pb, FixedStressConfig(L=0.5))
    assert rep.converged and fem.inf_norm(states[-1].p) == 0.0


def test_unknown_method():
    with pytest.raises(ValueError):
        biot.run_time_stepping(zero_problem(), "gauss-seidel")


@pytest.mark.parametrize("elements", ["P2P1", "P1P1"])
def test_manufactured_error_decreases_under_refinement(elements):
    u_ex, p_ex = cases.manufactured_solution()
    errs = []
    for n in (4, 8):
        pb = cases.build_case(cases.UNIT_SQUARE_SETUP1, 1e-10, elements, n=n)
        ops = biot.assemble_operators(pb)
        states, _ = biot.run_time_stepping(pb, ops=ops)
        t = pb.T
        eu = fem.l2_error(ops.u_space, states[-1].u, lambda x, y: u_ex(x, y, t))
        ep = fem.l2_error(ops.p_space, states[-1].p, lambda x, y: p_ex(x, y, t))
        errs.append((eu, ep))
    assert errs[1][0] < 0.5 * errs[0][0]
    assert errs[1][1] < 0.5 * errs[0][1]


def test_monolithic_residual_vanishes(setup1_problem, setup1_ops):
    prev = biot.initial_state(setup1_problem, setup1_ops)
    st = biot.solve_monolithic_step(setup1_ops, setup1_problem, prev)
    ru, rp = biot.monolithic_residual(setup1_ops, setup1_problem, prev, st)
    assert fem.inf_norm(ru) <= 1e-12 * fem.inf_norm(setup1_ops.A @ st.u)
    assert fem.inf_norm(rp) <= 1e-12 * fem.inf_norm(setup1_ops.Mp @ st.p) / setup1_problem.M * 1e3


def test_mandel_pressure_dirichlet_exact():
    pb = cases.build_case(cases.MANDEL, 1e-10)
    ops = biot.assemble_operators(pb)
    states, rep = biot.run_time_stepping(pb, ops=ops)
    assert len(states) == pb.num_steps + 1
    right = ops.p_space.boundary_nodes("right")
    for s in states[1:]:
        assert np.all(s.p[right] == 0.0)


# ---------------------------------------------------------------- fixed stress

def test_converges_in_one_iteration_from_fixed_point(setup1_problem, setup1_ops):
    prev = biot.initial_state(setup1_problem, setup1_ops)
    ref = biot.solve_monolithic_step(setup1_ops, setup1_problem, prev)
    cfg = FixedStressConfig(delta=1.5, K_dr=cases.kdr_value(setup1_problem, 1.6))
    st, rep = biot.solve_fixed_stress_step(setup1_ops, setup1_problem, prev, cfg,
                                           initial_guess=(ref.u, ref.p))
    assert rep.converged and rep.iterations == 1
    assert rel(st.p, ref.p) < 1e-12


@pytest.mark.parametrize("case", cases.TEST_CASES)
def test_fixed_point_is_monolithic_solution(case):
    pb = cases.build_case(case, 1e-12)
    ops = biot.assemble_operators(pb)
    cfg = FixedStressConfig(delta=1.0, K_dr=cases.kdr_value(pb, cases.CALIBRATED_KDR_FACTOR[case]))
    fs, rep = biot.run_time_stepping(pb, cfg, ops)
    mono, _ = biot.run_time_stepping(pb, ops=ops)
    assert rep.converged
    assert rel(fs[-1].u, mono[-1].u) < 1e-8
    assert rel(fs[-1].p, mono[-1].p) < 1e-8


def test_limit_independent_of_L(setup1_problem, setup1_ops):
    K = cases.kdr_value(setup1_problem, 1.6)
    a, _ = biot.run_time_stepping(setup1_problem, FixedStressConfig(delta=1.0, K_dr=K), setup1_ops)
    b, _ = biot.run_time_stepping(setup1_problem, FixedStressConfig(delta=2.0, K_dr=K), setup1_ops)
    assert rel(a[-1].p, b[-1].p) < 1e-6


def test_two_steps_versus_one():
    one = cases.build_case(cases.UNIT_SQUARE_SETUP1, 1e-12, T=0.2, tau=0.2)
    two = cases.build_case(cases.UNIT_SQUARE_SETUP1, 1e-12, T=0.2, tau=0.1)
    cfg = FixedStressConfig(delta=1.5, K_dr=cases.kdr_value(one, 1.6))
    s1, r1 = biot.run_time_stepping(one, cfg)
    s2, r2 = biot.run_time_stepping(two, cfg)
    assert len(r1.steps) == 1 and len(r2.steps) == 2
    assert [s.time_index for s in s2] == [0, 1, 2]
    assert r2.total_iterations == sum(r2.iteration_counts)
    # both approximate the same exact solution at T
    assert rel(s1[-1].p, s2[-1].p) < 0.05


def test_unstabilised_stiff_case_struggles():
    pb = cases.build_case(cases.UNIT_SQUARE_SETUP1, 1e-15, M=1e16)
    ops = biot.assemble_operators(pb)
    K = cases.kdr_value(pb, 1.6)
    good, rg = biot.solve_fixed_stress_step(ops, pb, biot.initial_state(pb, ops),
                                            FixedStressConfig(delta=1.0, K_dr=K))
    bad, rb = biot.solve_fixed_stress_step(ops, pb, biot.initial_state(pb, ops),
                                           FixedStressConfig(L=0.0, max_iter=200))
    assert rg.converged
    assert (not rb.converged) or rb.iterations > 5 * rg.iterations


def test_nonconverged_step_ends_run():
    pb = cases.build_case(cases.MANDEL, 1e-12)
    cfg = FixedStressConfig(delta=1.5, K_dr=cases.kdr_value(pb, 1.35), max_iter=3)
    states, rep = biot.run_time_stepping(pb, cfg)
    assert len(rep.steps) == 1 and not rep.converged
    assert rep.steps[0].iterations == 3 and not rep.steps[0].diverged


def test_step_failure_carries_step_index(setup1_problem, setup1_ops):
    def guess(n, prev):
        return np.zeros(3), prev.p

    with pytest.raises(biot.StepFailure) as info:
        biot.run_time_stepping(setup1_problem, FixedStressConfig(L=1e-11), setup1_ops, guess)
    assert info.value.step == 1


def test_callback_sees_every_iteration(setup1_problem, setup1_ops):
    seen = []
    cfg = FixedStressConfig(delta=1.5, K_dr=cases.kdr_value(setup1_problem, 1.6))
    _, rep = biot.run_time_stepping(setup1_problem, cfg, setup1_ops,
                                    callback=lambda n, i, u, p: seen.append((n, i)))
    assert seen == [(1, i) for i in range(1, rep.total_iterations + 1)]


def test_pressure_increments_contract(setup1_problem, setup1_ops):
    cfg = FixedStressConfig(delta=2.0, K_dr=cases.kdr_value(setup1_problem, 1.6))
    _, rep = biot.run_time_stepping(setup1_problem, cfg, setup1_ops)
    d = np.asarray(rep.steps[0].dp_l2)
    assert np.all(d[2:] <= d[1:-1])
    # the first increment is measured from the initial guess
    assert np.all(rep.steps[0].contraction_factors[1:] < 1)


def test_fixed_point_residual_bounded_by_tolerance(setup1_problem, setup1_ops):
    pb, ops = setup1_problem, setup1_ops
    eps = 1e-8
    cfg = FixedStressConfig(delta=1.5, K_dr=cases.kdr_value(pb, 1.6), eps_u_rel=eps, eps_p_rel=eps)
    prev = biot.initial_state(pb, ops)
    st, rep = biot.solve_fixed_stress_step(ops, pb, prev, cfg)
    assert rep.converged
    ru, rp = biot.monolithic_residual(ops, pb, prev, st)
    L = cfg.stabilization(pb.alpha)
    scale_u = eps * pb.alpha * fem.inf_norm(abs(ops.D.T) @ abs(st.p))
    scale_p = eps * (L * fem.inf_norm(abs(ops.Mp) @ abs(st.p))
                     + pb.alpha * fem.inf_norm(abs(ops.D) @ abs(st.u)))
    assert fem.inf_norm(ru) <= 10 * (scale_u + 1e-12 * fem.inf_norm(abs(ops.A) @ abs(st.u)))
    assert fem.inf_norm(rp) <= 10 * scale_p


def test_error_inequality_with_mu_plus_lambda():
    pb = cases.build_case(cases.UNIT_SQUARE_SETUP2, 1e-13)
    ops = biot.assemble_operators(pb)
    prev = biot.initial_state(pb, ops)
    ref = biot.solve_monolithic_step(ops, pb, prev)
    K = pb.mu + pb.lam
    ok = []

    def cb(i, u, p):
        eu, ep = u - ref.u, p - ref.p
        ok.append(eu @ (ops.A @ eu) <= pb.alpha ** 2 / K * (ep @ (ops.Mp @ ep)) * (1 + 1e-6))

    biot.solve_fixed_stress_step(ops, pb, prev, FixedStressConfig(delta=1.0, K_dr=K), callback=cb)
    assert ok and all(ok)


def test_residual_checks_pass_at_moderate_tolerance(setup1_problem, setup1_ops):
    cfg = FixedStressConfig(delta=1.5, K_dr=cases.kdr_value(setup1_problem, 1.6),
                            eps_u_rel=1e-6, eps_p_rel=1e-6)
    prev = biot.initial_state(setup1_problem, setup1_ops)
    _, rep = biot.solve_fixed_stress_step(setup1_ops, setup1_problem, prev, cfg, check_residuals=True)
    assert rep.converged


def test_rebind_shares_factorisations_for_same_dofs(setup1_problem, setup1_ops):
    shifted = setup1_problem.replace(displacement_bcs=tuple(DisplacementBC(t, (0, 1), 1e-3) for t in TAGS))
    ops2 = biot.rebind_operators(setup1_ops, shifted)
    assert ops2._cache is setup1_ops._cache and ops2.A is setup1_ops.A
    states, _ = biot.run_time_stepping(shifted, ops=ops2)
    bnd = ops2.u_dirichlet_dofs
    assert np.allclose(states[-1].u[bnd], 1e-3)
    fewer = setup1_problem.replace(displacement_bcs=(DisplacementBC("bottom"),))
    assert biot.rebind_operators(setup1_ops, fewer)._cache is not setup1_ops._cache


def test_time_dependent_dirichlet_data_applied():
    pb = cases.build_case(cases.MANDEL, 1e-10)
    ops = biot.assemble_operators(pb)
    states, _ = biot.run_time_stepping(pb, ops=ops)
    roots = mandel.mandel_roots(mandel.MANDEL_PARAMETERS.nu, mandel.MANDEL_PARAMETERS.nu_u, mandel.MANDEL_PARAMETERS.n_terms)
    top = ops.u_space.component_dofs(1, ops.u_space.boundary_nodes("top"))
    t = pb.time(states[-1].time_index)
    expected = mandel.mandel_uy(mandel.MANDEL_PARAMETERS, roots, mandel.MANDEL_PARAMETERS.b, t)
    assert np.allclose(states[-1].u[top], expected, rtol=1e-14, atol=0)


# ---------------------------------------------------------------- reports

def _step(d):
    return biot.StepReport(1, iterations=len(d), dp_l2=list(d), converged=True)


def test_observed_rate_geometric_sequence():
    assert biot.observed_rate(_step(0.5 ** np.arange(10))) == pytest.approx(0.5, rel=1e-12)
    rep = biot.IterationReport([_step(0.5 ** np.arange(10)), _step(0.25 ** np.arange(10))])
    assert biot.observed_rate(rep) == pytest.approx(np.sqrt(0.125), rel=1e-12)


def test_observed_rate_undefined_for_short_histories():
    with pytest.raises(biot.UndefinedRateError):
        biot.observed_rate(_step([1.0, 0.1]))
    with pytest.raises(biot.UndefinedRateError):
        biot.observed_rate(biot.IterationReport([]))


def test_observed_rate_of_stalling_run_is_at_least_one():
    assert biot.observed_rate(_step(1.1 ** np.arange(6))) >= 1.0


def test_trajectory_round_trip(tmp_path):
    pb = cases.build_case(cases.MANDEL, 1e-10)
    ops = biot.assemble_operators(pb)
    states, _ = biot.run_time_stepping(pb, ops=ops)
    path = tmp_path / "traj.txt"
    biot.write_trajectory(path, states, ops, pb)
    blocks = biot.read_trajectory(path)
    assert len(blocks) == 2 * len(states)
    for (meta_u, u), (meta_p, p), s in zip(blocks[::2], blocks[1::2], states):
        assert meta_u["field"] == "u" and meta_p["space"] == fem.P1_SCALAR
        assert int(meta_u["step"]) == s.time_index
        assert float(meta_u["time"]) == pb.time(s.time_index)
        assert np.array_equal(u, s.u) and np.array_equal(p, s.p)


def test_elastic_energy_positive(setup1_problem, setup1_ops, rng):
    u = rng.standard_normal(setup1_ops.u_space.num_dofs)
    assert biot.elastic_energy(setup1_ops, u) > 0
