"""Convergence-rate model of the fixed-stress iteration and choice of its stabilisation.

With ``L = alpha**2 / (delta * K_dr)`` the squared pressure error contracts per
iteration by at most

    rate = L / (L + 2/M + 2 tau kappa / C**2 + (2 - delta) alpha**2 / beta)

and the best ``delta`` is ``min(A / 2B, 2)`` with
``A = 2/M + 2 tau kappa / C**2 + 2 alpha**2 / beta`` and ``B = alpha**2 / beta``.
The remaining functions estimate the constants entering the bound (Poincare
constant, discrete inf-sup constant, coercivity constant ``K_dr``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fem
from .fem import FunctionSpace


@dataclass(frozen=True)
class RateModel:
    """Constants of the rate bound.  ``M``, ``C_omega`` and ``beta`` may be ``inf``."""

    alpha: float
    M: float
    tau: float
    kappa: float
    C_omega: float
    beta: float
    K_dr: float

    def __post_init__(self):
        for key in ("alpha", "M", "tau", "kappa", "C_omega", "beta", "K_dr"):
            v = getattr(self, key)
            if np.isnan(v) or not v > 0:
                raise ValueError(f"{key} must be strictly positive, got {v}")
        for key in ("alpha", "tau", "kappa", "K_dr"):
            if not np.isfinite(getattr(self, key)):
                raise ValueError(f"{key} must be finite")

    @property
    def flow_term(self) -> float:
        """``2/M + 2 tau kappa / C_omega**2``."""
        return 2.0 / self.M + 2.0 * self.tau * self.kappa / self.C_omega ** 2

    @property
    def B(self) -> float:
        return self.alpha ** 2 / self.beta

    @property
    def A(self) -> float:
        return self.flow_term + 2.0 * self.B

    @property
    def L_phys(self) -> float:
        return self.alpha ** 2 / self.K_dr


def admissible_L(model: RateModel, delta: float) -> float:
    """Smallest stabilisation covered by the bound for this ``delta``."""
    return model.alpha ** 2 / (delta * model.K_dr)


def theoretical_rate(model: RateModel, delta: float, L: float | None = None) -> float:
    """Bound on ``|e_p^i|^2 / |e_p^{i-1}|^2``; ``L`` defaults to the admissible minimum."""
    if not 0 < delta <= 2:
        raise ValueError(f"delta must lie in (0, 2], got {delta}")
    L_min = admissible_L(model, delta)
    if L is None:
        L = L_min
    elif L < L_min * (1 - 1e-12):
        raise ValueError(f"L = {L:.6e} violates L >= alpha^2/(delta K_dr) = {L_min:.6e}")
    return L / (L + model.flow_term + (2.0 - delta) * model.B)


def optimal_delta(model: RateModel) -> float:
    return min(model.A / (2.0 * model.B), 2.0)


def optimal_L(model: RateModel) -> float:
    return model.alpha ** 2 / (optimal_delta(model) * model.K_dr)


# --------------------------------------------------------------------------
# numerical constants
# --------------------------------------------------------------------------

def _free(n, constrained):
    mask = np.ones(n, dtype=bool)
    mask[np.asarray(constrained, dtype=np.int64)] = False
    return np.flatnonzero(mask)


def inverse_iteration(K: sp.spmatrix, M: sp.spmatrix, tol: float = 1e-6, max_iter: int = 10000,
                      x0: np.ndarray | None = None):
    """Smallest eigenpair of ``K x = lam M x`` (K, M symmetric, M positive definite).

    Returns ``(lam, x, iterations)`` with ``x`` M-normalised.  Iterates until the
    Rayleigh quotient changes by less than ``1e-2 * tol`` relative.
    """
    lu = spla.splu(sp.csc_matrix(K))
    x = np.ones(K.shape[0]) if x0 is None else np.array(x0, dtype=float)
    x /= np.sqrt(x @ (M @ x))
    lam = x @ (K @ x)
    for it in range(1, max_iter + 1):
        y = lu.solve(M @ x)
        y /= np.sqrt(y @ (M @ y))
        lam_new = y @ (K @ y)
        x = y
        if abs(lam_new - lam) <= 1e-2 * tol * abs(lam_new):
            return float(lam_new), x, it
        lam = lam_new
    raise RuntimeError(f"inverse iteration did not converge in {max_iter} iterations")


def estimate_poincare(p_space: FunctionSpace, dirichlet, tol: float = 1e-6) -> float:
    """Poincare constant ``1/sqrt(lam_min)`` of the Dirichlet Laplacian.

    ``dirichlet`` is a sequence of boundary tags or an array of constrained
    pressure dofs.
    """
    dofs = _dirichlet_dofs(p_space, dirichlet)
    if len(dofs) == 0:
        raise ValueError("Poincare constant undefined without a Dirichlet pressure boundary")
    free = _free(p_space.num_dofs, dofs)
    K = fem.assemble_pressure_stiffness(p_space, 1.0)[free][:, free]
    M = fem.assemble_pressure_mass(p_space)[free][:, free]
    lam, _, _ = inverse_iteration(K, M, tol)
    return 1.0 / np.sqrt(lam)


def _dirichlet_dofs(space: FunctionSpace, dirichlet):
    if dirichlet is None:
        return np.empty(0, dtype=np.int64)
    items = list(dirichlet)
    if items and isinstance(items[0], str):
        nodes = np.unique(np.concatenate([space.boundary_nodes(t) for t in items]))
        return np.concatenate([space.component_dofs(c, nodes) for c in range(space.ncomp)])
    return np.asarray(items, dtype=np.int64)


@dataclass(frozen=True)
class InfSupEstimate:
    """Discrete inf-sup data.

    ``gamma`` is taken on the complement of the kernel of ``D^T`` (pressures
    the displacement space cannot see, e.g. constants under full clamping or
    spurious checkerboard-type modes); ``kernel_dim`` counts those modes and
    ``gamma_raw`` is the unfiltered value (0 when the kernel is nontrivial).
    ``beta_estimate = 1 / gamma**2`` is a relative stability indicator.
    """

    gamma: float
    beta_estimate: float
    kernel_dim: int
    gamma_raw: float


def _reduced_elasticity(u_space, mu, lam, dirichlet_u):
    dofs = _dirichlet_dofs(u_space, dirichlet_u)
    free = _free(u_space.num_dofs, dofs)
    if len(free) == 0:
        raise ValueError("no free displacement dofs: elasticity operator is singular")
    A = fem.assemble_elasticity(u_space, mu, lam)[free][:, free]
    try:
        lu = spla.splu(sp.csc_matrix(A))
    except RuntimeError as exc:
        raise ValueError(f"elasticity operator is singular: {exc}") from exc
    # rigid motions left unconstrained show up as a tiny pivot
    piv = np.abs(lu.U.diagonal())
    if piv.min() < 1e-10 * piv.max():
        raise ValueError("elasticity operator is singular (displacement insufficiently constrained)")
    return free, A, lu


def estimate_inf_sup(u_space: FunctionSpace, p_space: FunctionSpace, mu: float, lam: float,
                     dirichlet_u, kernel_tol: float = 1e-10) -> InfSupEstimate:
    """Smallest eigenvalue ``gamma**2`` of ``(D A^{-1} D^T) q = gamma**2 Mp q``.

    ``A`` is the elasticity matrix on the constrained displacement space, so the
    displacement is measured in the energy ``2 mu |eps|^2 + lam |div|^2``.
    """
    if u_space.mesh is not p_space.mesh:
        raise ValueError("function spaces are defined on different meshes")
    free, _, lu = _reduced_elasticity(u_space, mu, lam, dirichlet_u)
    D = fem.assemble_coupling(u_space, p_space)[:, free]
    Mp = fem.assemble_pressure_mass(p_space).toarray()
    Dt = D.T.toarray()
    S = D @ lu.solve(Dt)
    S = 0.5 * (S + S.T)
    ev = sla.eigh(S, Mp, eigvals_only=True)
    top = max(ev.max(), 0.0)
    if top <= 0:
        return InfSupEstimate(0.0, np.inf, len(ev), 0.0)
    kernel = ev <= kernel_tol * top
    raw = float(np.sqrt(max(ev[0], 0.0))) if not kernel.any() else 0.0
    gamma = float(np.sqrt(ev[~kernel][0]))
    return InfSupEstimate(gamma, 1.0 / gamma ** 2, int(kernel.sum()), raw)


def divergence_matrix(u_space: FunctionSpace) -> sp.csr_matrix:
    """Gram matrix of ``(div u, div v)``."""
    return fem.assemble_elasticity(u_space, 0.0, 1.0)


def energy_ratio(u_space: FunctionSpace, mu: float, lam: float, u: np.ndarray) -> float:
    """``(2 mu |eps(u)|^2 + lam |div u|^2) / |div u|^2`` for one field."""
    A = fem.assemble_elasticity(u_space, mu, lam)
    B = divergence_matrix(u_space)
    div2 = u @ (B @ u)
    if div2 <= 0:
        raise ValueError("field is divergence free; ratio undefined")
    return float(u @ (A @ u) / div2)


def coercivity_constant(u_space: FunctionSpace, mu: float, lam: float, dirichlet_u) -> float:
    """Largest ``K`` with ``2 mu |eps(u)|^2 + lam |div u|^2 >= K |div u|^2`` on the constrained space."""
    free, A, _ = _reduced_elasticity(u_space, mu, lam, dirichlet_u)
    B = divergence_matrix(u_space)[free][:, free].toarray()
    n = len(free)
    nu = sla.eigh(B, A.toarray(), eigvals_only=True, subset_by_index=[n - 1, n - 1])[0]
    if nu * A.diagonal().max() <= 1e-12 * B.diagonal().max():
        raise ValueError("constrained space is divergence free; coercivity ratio undefined")
    return float(1.0 / nu)


def verify_kdr(u_space: FunctionSpace, mu: float, lam: float, dirichlet_u, K_dr_candidate: float):
    """Check the coercivity inequality for ``K_dr_candidate``.

    Returns ``(holds, m)`` where ``m`` is the sharp constant on this space.
    """
    if not K_dr_candidate > 0:
        raise ValueError("K_dr candidate must be positive")
    m = coercivity_constant(u_space, mu, lam, dirichlet_u)
    return bool(m >= K_dr_candidate * (1 - 1e-12)), m
