"""Quasi-static linear Biot model: scenario definition, monolithic and fixed-stress solves.

Each backward Euler step solves the two-field system

    A u - alpha D^T p                      = F
    alpha D u + ((1/M) Mp + tau Kp) p      = tau (Sv + Gv) + (1/M) Mp p_old + alpha D u_old

either at once (:func:`solve_monolithic_step`) or by the fixed-stress iteration
(:func:`solve_fixed_stress_step`), which solves flow first with the
stabilisation term ``L Mp (p^i - p^{i-1})`` and then mechanics.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fem
from .fem import DirichletSet, FunctionSpace
from .mesh import Mesh

log = logging.getLogger(__name__)

TINY = 1e-300


class SolverFailure(RuntimeError):
    """A linear solve failed (singular system after constraint elimination)."""


class StepFailure(RuntimeError):
    """A time step failed; ``step`` is the 1-based time index."""

    def __init__(self, step: int, cause: Exception):
        super().__init__(f"time step {step} failed: {cause}")
        self.step = step
        self.cause = cause


class UndefinedRateError(ValueError):
    pass


# --------------------------------------------------------------------------
# scenario
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DisplacementBC:
    """Dirichlet data for the listed displacement components on a boundary tag.

    ``value`` is a number or a callable ``value(x, y, t)``.
    """

    tag: str
    components: tuple = (0, 1)
    value: float | Callable = 0.0


@dataclass(frozen=True)
class PressureBC:
    tag: str
    value: float | Callable = 0.0


@dataclass
class BiotProblem:
    """All data of one Biot scenario on a fixed mesh.

    Fields ``f(x, y, t) -> (fx, fy)`` and ``S_f(x, y, t)`` are the body force
    and fluid source.  ``initial_u``/``initial_p`` are callables of ``(x, y)``
    or dof vectors; ``None`` means zero.  Boundary parts not listed in
    ``displacement_bcs``/``pressure_bcs`` carry homogeneous natural conditions.
    When two entries constrain the same dof the earlier entry wins.
    """

    mesh: Mesh
    mu: float
    lam: float
    alpha: float
    M: float
    kappa: float
    tau: float
    T: float
    t0: float = 0.0
    elements: str = "P2P1"
    f: Callable | None = None
    S_f: Callable | None = None
    g_rho: tuple = (0.0, 0.0)
    displacement_bcs: Sequence[DisplacementBC] = ()
    pressure_bcs: Sequence[PressureBC] = ()
    initial_u: Callable | np.ndarray | None = None
    initial_p: Callable | np.ndarray | None = None
    p_ref: float = 1.0
    name: str = ""

    def __post_init__(self):
        for key in ("mu", "lam", "alpha", "M", "kappa", "tau"):
            val = getattr(self, key)
            if not (np.isfinite(val) and val > 0):
                raise ValueError(f"{key} must be strictly positive, got {val}")
        if self.elements not in ("P2P1", "P1P1"):
            raise ValueError(f"elements must be 'P2P1' or 'P1P1', got {self.elements!r}")
        steps = (self.T - self.t0) / self.tau
        if steps < 1 - 1e-9 or abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ValueError("(T - t0) / tau must be a positive integer")
        self.displacement_bcs = tuple(self.displacement_bcs)
        self.pressure_bcs = tuple(self.pressure_bcs)

    @property
    def num_steps(self) -> int:
        return int(round((self.T - self.t0) / self.tau))

    def time(self, n: int) -> float:
        return self.t0 + n * self.tau

    def replace(self, **changes) -> "BiotProblem":
        import dataclasses
        return dataclasses.replace(self, **changes)


@dataclass
class DiscreteState:
    u: np.ndarray
    p: np.ndarray
    time_index: int = 0


@dataclass
class FixedStressConfig:
    """Stabilisation and stopping parameters of the fixed-stress iteration.

    Give either ``L`` directly or ``delta`` together with ``K_dr``, in which
    case ``L = alpha**2 / (delta * K_dr)``.
    """

    L: float | None = None
    delta: float | None = None
    K_dr: float | None = None
    eps_u_rel: float = 1e-12
    eps_p_rel: float = 1e-12
    max_iter: int = 500

    def __post_init__(self):
        if (self.L is None) == (self.delta is None):
            raise ValueError("give exactly one of L or delta")
        if self.L is not None and self.L < 0:
            raise ValueError("L must be nonnegative")
        if self.delta is not None:
            if not self.delta > 0:
                raise ValueError("delta must be positive")
            if self.K_dr is None or not self.K_dr > 0:
                raise ValueError("delta needs a positive K_dr")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")

    def stabilization(self, alpha: float) -> float:
        if self.L is not None:
            return float(self.L)
        return alpha ** 2 / (self.delta * self.K_dr)

    @property
    def tol_lin(self) -> float:
        return 1e-3 * min(self.eps_u_rel, self.eps_p_rel)


@dataclass
class StepReport:
    """Diagnostics of one fixed-stress time step."""

    time_index: int
    iterations: int = 0
    du_rel: list = field(default_factory=list)
    dp_rel: list = field(default_factory=list)
    dp_l2: list = field(default_factory=list)
    converged: bool = False
    diverged: bool = False

    @property
    def contraction_factors(self) -> np.ndarray:
        d = np.asarray(self.dp_l2, dtype=float)
        if len(d) < 2:
            return np.empty(0)
        with np.errstate(divide="ignore", invalid="ignore"):
            return d[1:] / d[:-1]


@dataclass
class IterationReport:
    steps: list = field(default_factory=list)
    method: str = "fixed_stress"

    @property
    def total_iterations(self) -> int:
        return int(sum(s.iterations for s in self.steps))

    @property
    def iteration_counts(self) -> list:
        return [s.iterations for s in self.steps]

    @property
    def converged(self) -> bool:
        return bool(self.steps) and all(s.converged for s in self.steps)


# --------------------------------------------------------------------------
# discrete operators
# --------------------------------------------------------------------------

@dataclass(eq=False)
class AssembledOperators:
    """Matrices of one scenario plus the constrained dof plans.

    ``A`` elasticity, ``D`` coupling (pressure rows), ``Mp`` pressure mass,
    ``Kp`` pressure stiffness scaled by kappa.  Load vectors depend on time and
    are produced by :func:`step_data`.  Factorisations are cached per
    ``(kind, L, tau)``.
    """

    u_space: FunctionSpace
    p_space: FunctionSpace
    A: sp.csr_matrix
    D: sp.csr_matrix
    Mp: sp.csr_matrix
    Kp: sp.csr_matrix
    u_plan: list
    p_plan: list
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def u_dirichlet_dofs(self) -> np.ndarray:
        return np.sort(np.concatenate([d for d, _ in self.u_plan] or [np.empty(0, np.int64)]))

    @property
    def p_dirichlet_dofs(self) -> np.ndarray:
        return np.sort(np.concatenate([d for d, _ in self.p_plan] or [np.empty(0, np.int64)]))

    def factor(self, key, build: Callable[[], sp.spmatrix]):
        if key not in self._cache:
            K = build()
            self._cache[key] = (K, _ScaledLU(K, key[0]))
        return self._cache[key]


class _ScaledLU:
    """Sparse LU of ``S K S`` with ``S = diag(|K_ii|^-1/2)``.

    The monolithic block diagonal spans some 25 orders of magnitude; without
    equilibration pivoting loses most digits of the pressure equation.
    """

    def __init__(self, K: sp.spmatrix, name: str = "linear"):
        d = np.abs(K.diagonal())
        d[~(d > 0)] = 1.0
        self.s = 1.0 / np.sqrt(d)
        S = sp.diags(self.s)
        try:
            self.lu = spla.splu((S @ K @ S).tocsc(), permc_spec="MMD_AT_PLUS_A")
        except RuntimeError as exc:
            raise SolverFailure(f"factorisation of {name} system failed: {exc}") from exc

    def solve(self, b):
        return self.s * self.lu.solve(self.s * b)


def _spaces(problem: BiotProblem):
    ukind = fem.P2_VECTOR if problem.elements == "P2P1" else fem.P1_VECTOR
    return FunctionSpace(problem.mesh, ukind), FunctionSpace(problem.mesh, fem.P1_SCALAR)


def _plan(space: FunctionSpace, bcs, taken):
    """Dof arrays per boundary condition, earlier entries winning shared dofs."""
    plan = []
    for bc in bcs:
        nodes = space.boundary_nodes(bc.tag)
        comps = getattr(bc, "components", (0,))
        for c in comps:
            dofs = space.component_dofs(c, nodes)
            dofs = np.array([d for d in dofs if d not in taken], dtype=np.int64)
            taken.update(int(d) for d in dofs)
            if len(dofs):
                plan.append((dofs, bc.value))
    return plan


def assemble_operators(problem: BiotProblem, u_space=None, p_space=None) -> AssembledOperators:
    if u_space is None or p_space is None:
        u_space, p_space = _spaces(problem)
    return AssembledOperators(
        u_space=u_space,
        p_space=p_space,
        A=fem.assemble_elasticity(u_space, problem.mu, problem.lam),
        D=fem.assemble_coupling(u_space, p_space),
        Mp=fem.assemble_pressure_mass(p_space),
        Kp=fem.assemble_pressure_stiffness(p_space, problem.kappa),
        u_plan=_plan(u_space, problem.displacement_bcs, set()),
        p_plan=_plan(p_space, problem.pressure_bcs, set()),
    )


def rebind_operators(ops: AssembledOperators, problem: BiotProblem) -> AssembledOperators:
    """Reuse the matrices of ``ops`` for a problem differing only in boundary data.

    Factorisations are shared when the constrained dofs are unchanged.
    """
    u_plan = _plan(ops.u_space, problem.displacement_bcs, set())
    p_plan = _plan(ops.p_space, problem.pressure_bcs, set())
    new = AssembledOperators(ops.u_space, ops.p_space, ops.A, ops.D, ops.Mp, ops.Kp, u_plan, p_plan)
    if (np.array_equal(new.u_dirichlet_dofs, ops.u_dirichlet_dofs)
            and np.array_equal(new.p_dirichlet_dofs, ops.p_dirichlet_dofs)):
        new._cache = ops._cache
    return new


def _values(space, dofs, value, t):
    if not callable(value):
        return np.full(len(dofs), float(value))
    xy = space.node_coords[dofs % space.num_nodes]
    return np.asarray(value(xy[:, 0], xy[:, 1], t), dtype=float) * np.ones(len(dofs))


def dirichlet_sets(ops: AssembledOperators, t: float):
    """Displacement and pressure :class:`DirichletSet` at time ``t``."""
    out = []
    for space, plan in ((ops.u_space, ops.u_plan), (ops.p_space, ops.p_plan)):
        if plan:
            dofs = np.concatenate([d for d, _ in plan])
            vals = np.concatenate([_values(space, d, v, t) for d, v in plan])
        else:
            dofs, vals = np.empty(0, np.int64), np.empty(0)
        out.append(DirichletSet(dofs, vals, space.num_dofs))
    return tuple(out)


@dataclass
class StepData:
    F: np.ndarray
    Sv: np.ndarray
    Gv: np.ndarray
    dir_u: DirichletSet
    dir_p: DirichletSet


def step_data(problem: BiotProblem, ops: AssembledOperators, t: float) -> StepData:
    f = None if problem.f is None else (lambda x, y: problem.f(x, y, t))
    S = None if problem.S_f is None else (lambda x, y: problem.S_f(x, y, t))
    g = problem.kappa * np.asarray(problem.g_rho, dtype=float)
    F, Sv, Gv = fem.assemble_loads(ops.p_space, ops.u_space, f, S, g)
    du, dp = dirichlet_sets(ops, t)
    return StepData(F, Sv, Gv, du, dp)


def initial_state(problem: BiotProblem, ops: AssembledOperators) -> DiscreteState:
    def coerce(init, space):
        if init is None:
            return np.zeros(space.num_dofs)
        if callable(init):
            return fem.interpolate(space, init)
        vec = np.array(init, dtype=float)
        if vec.shape != (space.num_dofs,):
            raise ValueError(f"initial vector has shape {vec.shape}, expected ({space.num_dofs},)")
        return vec

    return DiscreteState(coerce(problem.initial_u, ops.u_space),
                         coerce(problem.initial_p, ops.p_space), 0)


# --------------------------------------------------------------------------
# solvers
# --------------------------------------------------------------------------

def _solve(factored, rhs, dirichlet, tol=None, require_finite=True):
    K, lu = factored
    b = fem.lift_rhs(K, rhs, dirichlet)
    x = lu.solve(b)
    if not np.all(np.isfinite(x)):
        if not require_finite:
            return x
        raise SolverFailure("linear solve produced non-finite values")
    if tol is not None:
        Kd = fem.eliminate_matrix(K, dirichlet.dofs)
        res = np.linalg.norm(Kd @ x - b)
        if res > tol * max(np.linalg.norm(b), TINY):
            raise SolverFailure(f"linear residual {res:.3e} exceeds tolerance")
    return x


def _mechanics(ops: AssembledOperators):
    return ops.factor(("mech",), lambda: fem.eliminate_matrix(ops.A, ops.u_dirichlet_dofs)), ops.A


def _flow_matrix(problem, ops, L):
    return (1.0 / problem.M + L) * ops.Mp + problem.tau * ops.Kp


def monolithic_matrix(problem: BiotProblem, ops: AssembledOperators) -> sp.csr_matrix:
    a = problem.alpha
    return sp.bmat([[ops.A, -a * ops.D.T],
                    [a * ops.D, _flow_matrix(problem, ops, 0.0)]], format="csr")


def monolithic_rhs(problem, ops, data: StepData, prev: DiscreteState) -> np.ndarray:
    tau, a = problem.tau, problem.alpha
    rp = tau * (data.Sv + data.Gv) + ops.Mp @ prev.p / problem.M + a * (ops.D @ prev.u)
    return np.concatenate([data.F, rp])


def _combined_dirichlet(ops, data):
    nu = ops.u_space.num_dofs
    return DirichletSet(np.concatenate([data.dir_u.dofs, data.dir_p.dofs + nu]),
                        np.concatenate([data.dir_u.values, data.dir_p.values]),
                        nu + ops.p_space.num_dofs)


def solve_monolithic_step(ops: AssembledOperators, problem: BiotProblem,
                          prev: DiscreteState, tol_lin: float | None = None) -> DiscreteState:
    """Fully coupled backward Euler step from ``prev``; reference for the splitting."""
    n = prev.time_index + 1
    data = step_data(problem, ops, problem.time(n))
    dset = _combined_dirichlet(ops, data)
    K = monolithic_matrix(problem, ops)
    fac = ops.factor(("mono", problem.tau),
                     lambda: fem.eliminate_matrix(K, dset.dofs))
    x = _solve((K, fac[1]), monolithic_rhs(problem, ops, data, prev), dset, tol_lin)
    nu = ops.u_space.num_dofs
    return DiscreteState(x[:nu], x[nu:], n)


def monolithic_residual(ops, problem, prev: DiscreteState, state: DiscreteState):
    """Residuals of the coupled equations at ``state``, zeroed on constrained dofs."""
    data = step_data(problem, ops, problem.time(prev.time_index + 1))
    a = problem.alpha
    ru = data.F - (ops.A @ state.u - a * (ops.D.T @ state.p))
    rp = monolithic_rhs(problem, ops, data, prev)[ops.u_space.num_dofs:] \
        - (a * (ops.D @ state.u) + _flow_matrix(problem, ops, 0.0) @ state.p)
    ru[data.dir_u.dofs] = 0.0
    rp[data.dir_p.dofs] = 0.0
    return ru, rp


def _rel_increment(new, old):
    den = fem.inf_norm(new)
    inc = fem.inf_norm(new - old)
    return inc if den < TINY else inc / den


def solve_fixed_stress_step(ops: AssembledOperators, problem: BiotProblem, prev: DiscreteState,
                            config: FixedStressConfig, initial_guess=None, callback=None,
                            check_residuals: bool = False):
    """One time step of the fixed-stress splitting.

    Parameters
    ----------
    initial_guess : (u, p) tuple, optional
        Starting iterate; defaults to the previous time level.
    callback : callable, optional
        Called as ``callback(i, u, p)`` after every iteration.
    check_residuals : bool
        Verify every inner solve against ``config.tol_lin``.

    Returns
    -------
    DiscreteState, StepReport
        Non-convergence is reported through ``StepReport.converged`` rather
        than raised.
    """
    n = prev.time_index + 1
    data = step_data(problem, ops, problem.time(n))
    a, L = problem.alpha, config.stabilization(problem.alpha)
    tol = config.tol_lin if check_residuals else None

    flow = ops.factor(("flow", L, problem.tau),
                      lambda: fem.eliminate_matrix(_flow_matrix(problem, ops, L), ops.p_dirichlet_dofs))
    flow = (_flow_matrix(problem, ops, L), flow[1])
    mech_fac, A = _mechanics(ops)
    mech = (A, mech_fac[1])

    if initial_guess is None:
        u_it, p_it = prev.u.copy(), prev.p.copy()
    else:
        u_it = np.array(initial_guess[0], dtype=float)
        p_it = np.array(initial_guess[1], dtype=float)
    fixed = ops.Mp @ prev.p / problem.M + problem.tau * (data.Sv + data.Gv)
    report = StepReport(time_index=n)

    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(1, config.max_iter + 1):
            rhs_p = fixed + L * (ops.Mp @ p_it) - a * (ops.D @ (u_it - prev.u))
            # an overflowing iterate is reported as divergence below
            p = _solve(flow, rhs_p, data.dir_p, tol, require_finite=False)
            u = _solve(mech, data.F + a * (ops.D.T @ p), data.dir_u, tol, require_finite=False)
            dp = p - p_it
            report.iterations = i
            report.du_rel.append(_rel_increment(u, u_it))
            report.dp_rel.append(_rel_increment(p, p_it))
            report.dp_l2.append(float(np.sqrt(max(dp @ (ops.Mp @ dp), 0.0))))
            if callback is not None:
                callback(i, u, p)
            u_it, p_it = u, p
            if not (np.isfinite(report.du_rel[-1]) and np.isfinite(report.dp_rel[-1])):
                report.diverged = True
                break
            if report.du_rel[-1] < config.eps_u_rel and report.dp_rel[-1] < config.eps_p_rel:
                report.converged = True
                break
    if not report.converged:
        log.info("fixed-stress step %d stopped after %d iterations without convergence", n, report.iterations)
    return DiscreteState(u_it, p_it, n), report


def run_time_stepping(problem: BiotProblem, method="monolithic", ops: AssembledOperators | None = None,
                      initial_guess=None, callback=None):
    """March from ``t0`` to ``T``.

    ``method`` is ``"monolithic"`` or a :class:`FixedStressConfig`.
    ``initial_guess`` may be a callable ``initial_guess(n, prev) -> (u, p)``
    supplying the first iterate of step ``n``.  A fixed-stress step that fails
    to converge ends the run; the report records it.

    Returns the list of states (initial state first) and an
    :class:`IterationReport`.
    """
    ops = ops or assemble_operators(problem)
    state = initial_state(problem, ops)
    states = [state]
    monolithic = isinstance(method, str)
    if monolithic and method != "monolithic":
        raise ValueError(f"unknown method {method!r}")
    report = IterationReport(method="monolithic" if monolithic else "fixed_stress")
    for n in range(1, problem.num_steps + 1):
        try:
            if monolithic:
                state = solve_monolithic_step(ops, problem, state)
                step = StepReport(n, iterations=1, converged=True)
            else:
                guess = initial_guess(n, state) if initial_guess is not None else None
                cb = None if callback is None else (lambda i, u, p, n=n: callback(n, i, u, p))
                state, step = solve_fixed_stress_step(ops, problem, state, method, guess, cb)
        except (SolverFailure, ValueError) as exc:
            raise StepFailure(n, exc) from exc
        states.append(state)
        report.steps.append(step)
        if not step.converged:
            break
    return states, report


def observed_rate(report) -> float:
    """Geometric mean of pressure-increment contraction over the last half of the history.

    Accepts a :class:`StepReport` or an :class:`IterationReport` (ratios of all
    steps are pooled).
    """
    steps = report.steps if isinstance(report, IterationReport) else [report]
    logs = []
    for s in steps:
        d = np.asarray(s.dp_l2, dtype=float)
        if len(d) < 3:
            continue
        ratios = d[1:] / np.maximum(d[:-1], TINY)
        tail = ratios[(len(ratios)) // 2:]
        logs.extend(np.log(np.maximum(tail, TINY)))
    if not logs:
        raise UndefinedRateError("observed rate needs at least 3 recorded iterations")
    with np.errstate(over="ignore"):
        return float(np.exp(np.mean(logs)))


def elastic_energy(ops: AssembledOperators, u: np.ndarray) -> float:
    """``2 mu |eps(u)|^2 + lam |div u|^2`` using the assembled elasticity matrix."""
    return float(u @ (ops.A @ u))


def write_trajectory(path, states, ops: AssembledOperators, problem: BiotProblem) -> None:
    """Text container: one header line per block, then the dof values."""
    with open(path, "w") as fh:
        for s in states:
            t = problem.time(s.time_index)
            for name, space, vec in (("u", ops.u_space, s.u), ("p", ops.p_space, s.p)):
                fh.write(f"# field={name} space={space.kind} ndofs={len(vec)} step={s.time_index} time={float(t)!r}\n")
                fh.write(" ".join(repr(float(v)) for v in vec) + "\n")


def read_trajectory(path):
    """Inverse of :func:`write_trajectory`: list of ``(header dict, values)``."""
    blocks = []
    with open(path) as fh:
        lines = fh.read().splitlines()
    for head, body in zip(lines[::2], lines[1::2]):
        meta = dict(item.split("=", 1) for item in head[1:].split())
        vals = np.array([float(v) for v in body.split()]) if body.strip() else np.empty(0)
        if len(vals) != int(meta["ndofs"]):
            raise ValueError(f"block {meta} has {len(vals)} values")
        blocks.append((meta, vals))
    return blocks
