import numpy as np
import pytest
import scipy.optimize as so

from fixedstress import biot, cases, mandel
from fixedstress.mandel import MANDEL_PARAMETERS as P


@pytest.fixture(scope="module")
def roots():
    return mandel.mandel_roots(P.nu, P.nu_u, P.n_terms)


def test_first_root_in_expected_window(roots):
    assert 1.3 < roots[0] < 1.4
    assert np.all(np.diff(roots) > 0)
    n = np.arange(1, len(roots) + 1)
    assert np.all((roots > (n - 1) * np.pi) & (roots < (n - 0.5) * np.pi))


def test_roots_match_brentq(roots):
    c = P.root_slope
    for k in (0, 1, 9, 99, 199):
        lo, hi = k * np.pi + 1e-9, k * np.pi + np.pi / 2 - 1e-9
        ref = so.brentq(lambda a: np.sin(a) - c * a * np.cos(a), lo, hi, xtol=1e-15, rtol=1e-15)
        assert roots[k] == pytest.approx(ref, rel=1e-14)


def test_root_residuals(roots):
    c = P.root_slope
    assert mandel.root_residual(roots, c).max() < 1e-10
    head = roots[:10]
    assert np.abs(np.tan(head) - c * head).max() < 1e-10


def test_roots_approach_asymptote_monotonically(roots):
    gap = (np.arange(1, 51) - 0.5) * np.pi - roots[:50]
    assert np.all(gap > 0) and np.all(np.diff(gap) < 0)


def test_invalid_poisson_ratios():
    for nu, nu_u in ((0.3, 0.2), (0.0, 0.3), (0.2, 0.5)):
        with pytest.raises(ValueError):
            mandel.mandel_roots(nu, nu_u, 5)
        with pytest.raises(ValueError):
            mandel.MandelParameters(nu=nu, nu_u=nu_u)
    with pytest.raises(ValueError):
        mandel.MandelParameters(n_terms=0)
    with pytest.raises(ValueError):
        mandel.MandelParameters(F=-1.0)


def test_pressure_vanishes_on_drained_side(roots, rng):
    ts = rng.uniform(0.0, 1e3, 100)
    assert all(mandel.mandel_pressure(P, roots, P.a, t) == 0.0 for t in ts)


def test_doubled_truncation_is_consistent(roots):
    for t in (10.0, 50.0):
        assert mandel.truncation_check(P, roots, t) < 1e-10


def test_long_time_limits(roots):
    t = 1e7
    x = np.linspace(0, P.a, 11)
    assert np.abs(mandel.mandel_pressure(P, roots, x, t)).max() < 1e-12 * P.F / P.a
    # drained state: Poisson ratio nu
    ux = mandel.mandel_ux(P, roots, x, t)
    assert ux == pytest.approx(P.F * P.nu / (2 * P.mu * P.a) * x, rel=1e-12, abs=1e-300)
    uy = mandel.mandel_uy(P, roots, P.b, t)
    assert uy == pytest.approx(-P.F * (1 - P.nu) / (2 * P.mu * P.a) * P.b, rel=1e-12)


def test_displacement_boundary_conditions(roots, rng):
    for t in rng.uniform(1.0, 500.0, 10):
        assert mandel.mandel_ux(P, roots, 0.0, t) == 0.0
        assert mandel.mandel_uy(P, roots, 0.0, t) == 0.0


def test_pressure_drains_over_time(roots):
    x = P.a / 4
    ps = [mandel.mandel_pressure(P, roots, x, t) for t in (10.0, 100.0, 1000.0, 1e4)]
    assert ps[-1] < ps[0] and ps[-1] > 0


def test_mandel_cryer_overshoot(roots):
    # the centre pressure rises above its early value before decaying
    early = mandel.mandel_pressure(P, roots, 0.0, 1.0)
    later = [mandel.mandel_pressure(P, roots, 0.0, t) for t in np.linspace(10, 2000, 40)]
    assert max(later) > early


def test_series_needs_enough_terms():
    with pytest.raises(RuntimeError, match="truncated"):
        mandel.build_mandel_problem(mandel.MandelParameters(n_terms=2))


def test_numerical_pressure_matches_series(roots):
    pb = cases.build_case(cases.MANDEL, 1e-10)
    ops = biot.assemble_operators(pb)
    states, _ = biot.run_time_stepping(pb, ops=ops)
    assert pb.time(states[-1].time_index) == 50.0
    xy = ops.p_space.node_coords
    line = np.isclose(xy[:, 1], P.b / 2)
    order = np.argsort(xy[line, 0])
    x = xy[line, 0][order]
    ph = states[-1].p[line][order]
    pe = mandel.mandel_pressure(P, roots, x, 50.0)
    err = np.sqrt(np.trapezoid((ph - pe) ** 2, x) / np.trapezoid(pe ** 2, x))
    assert err < 0.1
