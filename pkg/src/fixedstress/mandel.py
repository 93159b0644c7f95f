"""Closed-form solution of Mandel's consolidation problem and the matching scenario.

The series run over the positive roots of ``tan(a_n) = c a_n`` with
``c = (1 - nu) / (nu_u - nu)``; one root lies in each interval
``((n-1) pi, (n-1) pi + pi/2)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .biot import BiotProblem, DisplacementBC, PressureBC
from .mesh import build_rectangle_mesh

BRACKET_EPS = 1e-9


@dataclass(frozen=True)
class MandelParameters:
    F: float = 6e8
    B_skempton: float = 0.833
    nu: float = 0.2
    nu_u: float = 0.44
    c_f: float = 0.47
    a: float = 100.0
    b: float = 10.0
    mu: float = 2.475e9
    n_terms: int = 200

    def __post_init__(self):
        if not 0 < self.nu < self.nu_u < 0.5:
            raise ValueError("need 0 < nu < nu_u < 0.5")
        if not (self.c_f > 0 and self.F > 0 and self.a > 0 and self.b > 0 and self.mu > 0):
            raise ValueError("F, c_f, a, b and mu must be positive")
        if self.n_terms < 1:
            raise ValueError("n_terms must be at least 1")

    @property
    def root_slope(self) -> float:
        return (1 - self.nu) / (self.nu_u - self.nu)


@dataclass(frozen=True)
class MandelCoefficients:
    """Biot coefficients and discretisation of the Mandel benchmark."""

    lam: float = 1.650e9
    mu: float = 2.475e9
    alpha: float = 1.0
    M: float = 1.650e10
    kappa: float = 1e-10
    nx: int = 20
    ny: int = 20
    tau: float = 10.0
    t0: float = 0.0
    T: float = 50.0


MANDEL_PARAMETERS = MandelParameters()
MANDEL_COEFFICIENTS = MandelCoefficients()
MANDEL_KAPPAS = (1e-14, 1e-13, 1e-12, 1e-11, 1e-10)


class RootFindingError(RuntimeError):
    pass


def root_residual(alpha, c):
    """Scaled residual ``|sin a - c a cos a| / (1 + c a)``.

    Equals ``|tan a - c a| |cos a| / (1 + c a)``; unlike the raw tangent form it
    stays well conditioned next to the poles of ``tan``.
    """
    alpha = np.asarray(alpha, dtype=float)
    return np.abs(np.sin(alpha) - c * alpha * np.cos(alpha)) / (1 + c * alpha)


def mandel_roots(nu: float, nu_u: float, n_terms: int) -> np.ndarray:
    """First ``n_terms`` positive roots of ``tan(a) = (1 - nu)/(nu_u - nu) a``, by bisection."""
    if not 0 < nu < nu_u < 0.5:
        raise ValueError("need 0 < nu < nu_u < 0.5")
    c = (1 - nu) / (nu_u - nu)

    def g(x):
        # same roots as tan(x) - c x inside each bracket, where cos(x) != 0
        return np.sin(x) - c * x * np.cos(x)

    roots = np.empty(n_terms)
    for n in range(1, n_terms + 1):
        lo = (n - 1) * np.pi + BRACKET_EPS
        hi = (n - 1) * np.pi + np.pi / 2 - BRACKET_EPS
        glo, ghi = g(lo), g(hi)
        if np.sign(glo) == np.sign(ghi):
            raise RootFindingError(f"no sign change in bracket of root {n}")
        while hi - lo > 1e-14:
            mid = 0.5 * (lo + hi)
            if mid <= lo or mid >= hi:
                break
            gm = g(mid)
            if np.sign(gm) == np.sign(glo):
                lo, glo = mid, gm
            else:
                hi = mid
        roots[n - 1] = 0.5 * (lo + hi)
    return roots


def _decay(params, roots, t):
    return np.exp(-roots ** 2 * params.c_f * t / params.a ** 2)


def _sum_desc(terms):
    # smallest terms first for accuracy
    return np.sum(terms[..., ::-1], axis=-1)


def mandel_pressure(params: MandelParameters, roots, x, t):
    x = np.asarray(x, dtype=float)
    r = np.asarray(roots)
    s, c = np.sin(r), np.cos(r)
    coef = s / (r - s * c) * _decay(params, r, t)
    xi = (x / params.a)[..., None]
    terms = coef * (np.cos(r * xi) - c)
    pref = 2 * params.F * params.B_skempton * (1 + params.nu_u) / (3 * params.a)
    return pref * _sum_desc(terms)


def mandel_ux(params: MandelParameters, roots, x, t):
    x = np.asarray(x, dtype=float)
    r = np.asarray(roots)
    s, c = np.sin(r), np.cos(r)
    den = r - s * c
    e = _decay(params, r, t)
    F, mu, a = params.F, params.mu, params.a
    linear = F * params.nu / (2 * mu * a) - F * params.nu_u / (mu * a) * _sum_desc(s * c / den * e)
    xi = (x / a)[..., None]
    wave = F / mu * _sum_desc(c / den * np.sin(r * xi) * e)
    return linear * x + wave


def mandel_uy(params: MandelParameters, roots, y, t):
    y = np.asarray(y, dtype=float)
    r = np.asarray(roots)
    s, c = np.sin(r), np.cos(r)
    e = _decay(params, r, t)
    F, mu, a = params.F, params.mu, params.a
    slope = -F * (1 - params.nu) / (2 * mu * a) + F * (1 - params.nu_u) / (mu * a) * _sum_desc(s * c / (r - s * c) * e)
    return slope * y


def truncation_check(params: MandelParameters, roots, t: float, points: int = 21) -> float:
    """Largest relative change of p, u_x, u_y when the series length is doubled."""
    doubled = mandel_roots(params.nu, params.nu_u, 2 * len(roots))
    x = np.linspace(0, params.a, points)
    y = np.linspace(0, params.b, points)
    worst = 0.0
    for fn, arg in ((mandel_pressure, x), (mandel_ux, x), (mandel_uy, y)):
        base = fn(params, roots, arg, t)
        ref = fn(params, doubled, arg, t)
        scale = max(np.max(np.abs(ref)), 1e-300)
        worst = max(worst, float(np.max(np.abs(base - ref)) / scale))
    return worst


def build_mandel_problem(params: MandelParameters = MANDEL_PARAMETERS,
                         coefficients: MandelCoefficients = MANDEL_COEFFICIENTS,
                         elements: str = "P2P1", check_truncation: bool = True) -> BiotProblem:
    """Biot scenario on ``(0, a) x (0, b)`` with data taken from the series.

    Normal displacement is prescribed on the left, bottom and top sides (the
    top value follows the series in time), the pressure vanishes on the right
    side, all other boundary data are natural.
    """
    roots = mandel_roots(params.nu, params.nu_u, params.n_terms)
    if check_truncation:
        err = truncation_check(params, roots, coefficients.tau)
        if err > 1e-10:
            raise RuntimeError(f"Mandel series truncated too early: relative change {err:.2e}")
    co = coefficients
    mesh = build_rectangle_mesh(params.a, params.b, co.nx, co.ny)

    def top_uy(x, y, t):
        return mandel_uy(params, roots, y, t)

    def init_u(x, y):
        return mandel_ux(params, roots, x, co.t0), mandel_uy(params, roots, y, co.t0)

    def init_p(x, y):
        return mandel_pressure(params, roots, x, co.t0)

    return BiotProblem(
        mesh=mesh, mu=co.mu, lam=co.lam, alpha=co.alpha, M=co.M, kappa=co.kappa,
        tau=co.tau, t0=co.t0, T=co.T, elements=elements,
        displacement_bcs=(
            DisplacementBC("left", (0,), 0.0),
            DisplacementBC("bottom", (1,), 0.0),
            DisplacementBC("top", (1,), top_uy),
        ),
        pressure_bcs=(PressureBC("right", 0.0),),
        initial_u=init_u, initial_p=init_p, name="Mandel",
    )
