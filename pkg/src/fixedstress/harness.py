"""Experiment runner: sweeps over the stabilisation parameter, randomized
robustness runs, calibration of ``K_dr`` and the CSV/SVG/JSON outputs.

Every cell of a sweep is one fixed-stress time-stepping run with
``L = alpha**2 / (delta * K_dr)``; its total iteration count is summed over the
time steps and averaged over realizations in randomized modes.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import biot, cases, tuning
from .biot import DisplacementBC, FixedStressConfig, PressureBC

log = logging.getLogger(__name__)

DISCRETIZATIONS = ("P2P1", "P1P1")
RANDOM_MODES = ("M1", "M2", "M3", "M4", "M5")
BETA_MODES = ("kdr", "infsup")
DEFAULT_DELTA_GRID = tuple(float(d) for d in np.round(np.arange(1.0, 2.5 + 1e-9, 0.05), 2))
CALIBRATION_FACTORS = tuple(float(c) for c in np.round(np.arange(1.0, 2.0 + 1e-9, 0.05), 2))
CSV_HEADER = ("test_case", "disc", "kappa", "delta", "L", "iterations", "converged",
              "observed_rate", "delta_star")
M5_MAX_DRAWS = 100


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class KdrExpression:
    """``K_dr = factor * mu + lam`` in one of the named forms.

    ``calibrated`` uses the per-case factor, ``mu+lambda`` the pessimistic
    two-dimensional value, ``2mu/d+lambda`` the drained bulk modulus in
    dimension ``d`` and ``factor`` an explicit coefficient.
    """

    kind: str = "calibrated"
    param: float | None = None

    def __post_init__(self):
        if self.kind not in ("calibrated", "mu+lambda", "2mu/d+lambda", "factor"):
            raise ConfigError(f"unknown K_dr expression {self.kind!r}")
        if self.kind in ("2mu/d+lambda", "factor") and not (self.param is not None and self.param > 0):
            raise ConfigError(f"K_dr expression {self.kind!r} needs a positive parameter")

    def factor(self, test_case: str) -> float:
        if self.kind == "calibrated":
            return cases.CALIBRATED_KDR_FACTOR[test_case]
        if self.kind == "mu+lambda":
            return 1.0
        if self.kind == "2mu/d+lambda":
            return 2.0 / self.param
        return float(self.param)

    def value(self, mu: float, lam: float, test_case: str) -> float:
        return self.factor(test_case) * mu + lam

    def __str__(self):
        return self.kind if self.param is None else f"{self.kind}:{self.param!r}"

    @classmethod
    def parse(cls, text: str) -> "KdrExpression":
        text = text.strip()
        kind, _, arg = text.partition(":")
        return cls(kind.strip(), float(arg) if arg else None)


def _float_tuple(values) -> tuple:
    return tuple(float(v) for v in values)


@dataclass(frozen=True)
class ExperimentConfig:
    """One sweep over ``kappa_list x delta_grid``.

    ``eps_u_rel``/``eps_p_rel`` default to the case tolerance and
    ``kappa_list`` to the case permeabilities.  ``random_scale`` multiplies
    every random order of magnitude (0 gives a degenerate distribution).
    ``C_omega`` overrides the numerically estimated Poincare constant.
    """

    test_case: str
    discretization: str = "P2P1"
    kappa_list: tuple | None = None
    delta_grid: tuple = DEFAULT_DELTA_GRID
    kdr: KdrExpression = KdrExpression()
    beta_mode: str = "kdr"
    random_mode: str | None = None
    num_realizations: int = 20
    seed: int = 0
    eps_u_rel: float | None = None
    eps_p_rel: float | None = None
    max_iter: int = 500
    mesh_n: int = cases.BENCHMARK.n
    C_omega: float | None = None
    random_scale: float = 1.0
    output_dir: str | None = None

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        if self.test_case not in cases.TEST_CASES:
            raise ConfigError(f"unknown test case {self.test_case!r}")
        disc = self.discretization.upper().replace("-", "")
        if disc not in DISCRETIZATIONS:
            raise ConfigError(f"unknown discretization {self.discretization!r}")
        set_("discretization", disc)
        kappas = cases.case_kappas(self.test_case) if self.kappa_list is None else self.kappa_list
        set_("kappa_list", _float_tuple(kappas))
        set_("delta_grid", _float_tuple(self.delta_grid))
        if isinstance(self.kdr, str):
            set_("kdr", KdrExpression.parse(self.kdr))
        if self.random_mode is not None and str(self.random_mode).lower() == "none":
            set_("random_mode", None)
        tol = cases.DEFAULT_TOL[self.test_case]
        if self.eps_u_rel is None:
            set_("eps_u_rel", tol)
        if self.eps_p_rel is None:
            set_("eps_p_rel", tol)

        grid = np.asarray(self.delta_grid)
        if len(grid) == 0:
            raise ConfigError("delta_grid must not be empty")
        if np.any(np.diff(grid) <= 0):
            raise ConfigError("delta_grid must be sorted and free of duplicates")
        if grid[0] <= 0:
            raise ConfigError("delta values must be positive")
        if not self.kappa_list or min(self.kappa_list) <= 0:
            raise ConfigError("kappa_list must contain positive values")
        if self.beta_mode not in BETA_MODES:
            raise ConfigError(f"beta_mode must be one of {BETA_MODES}")
        if self.random_mode is not None and self.random_mode not in RANDOM_MODES:
            raise ConfigError(f"random_mode must be none or one of {RANDOM_MODES}")
        if self.num_realizations < 1:
            raise ConfigError("num_realizations must be at least 1")
        if self.max_iter < 1:
            raise ConfigError("max_iter must be at least 1")
        if not (self.eps_u_rel > 0 and self.eps_p_rel > 0):
            raise ConfigError("tolerances must be positive")
        if self.random_scale < 0:
            raise ConfigError("random_scale must be nonnegative")
        if self.C_omega is not None and not self.C_omega > 0:
            raise ConfigError("C_omega must be positive")

    @property
    def realizations(self) -> int:
        return 1 if self.random_mode is None else self.num_realizations

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kdr"] = str(self.kdr)
        d["kappa_list"] = list(self.kappa_list)
        d["delta_grid"] = list(self.delta_grid)
        return d


_LIST_KEYS = {"kappa_list", "delta_grid"}
_INT_KEYS = {"num_realizations", "seed", "max_iter", "mesh_n"}
_FLOAT_KEYS = {"eps_u_rel", "eps_p_rel", "C_omega", "random_scale"}
_ALIASES = {"kappas": "kappa_list", "deltas": "delta_grid", "disc": "discretization",
            "tol": "tolerance", "k_dr": "kdr", "beta": "beta_mode", "random": "random_mode",
            "realizations": "num_realizations", "output": "output_dir", "n": "mesh_n"}


def _delta_range(text: str) -> tuple:
    start, stop, step = (float(v) for v in text.split(":"))
    count = int(round((stop - start) / step)) + 1
    return tuple(float(v) for v in np.round(start + step * np.arange(count), 12))


def parse_config_text(text: str) -> ExperimentConfig:
    """Parse ``key = value`` lines (``#`` starts a comment).

    Lists are comma separated; ``delta_grid`` also accepts ``start:stop:step``
    and ``tolerance`` sets both stopping tolerances.
    """
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = _ALIASES.get(key.lower(), key.lower())
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = value

    kw = {}
    try:
        for key, value in raw.items():
            if key == "tolerance":
                kw["eps_u_rel"] = kw["eps_p_rel"] = float(value)
            elif key == "delta_grid" and ":" in value:
                kw[key] = _delta_range(value)
            elif key in _LIST_KEYS:
                kw[key] = tuple(float(v) for v in value.split(",") if v.strip())
            elif key in _INT_KEYS:
                kw[key] = int(value)
            elif key in _FLOAT_KEYS:
                kw[key] = float(value)
            elif key in ("test_case", "discretization", "kdr", "beta_mode", "random_mode", "output_dir"):
                kw[key] = value
            else:
                raise ConfigError(f"unknown configuration key {key!r}")
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad value in configuration: {exc}") from exc
    if "test_case" not in kw:
        raise ConfigError("configuration needs a test_case")
    return ExperimentConfig(**kw)


def load_config(path) -> ExperimentConfig:
    return parse_config_text(Path(path).read_text())


# --------------------------------------------------------------------------
# results
# --------------------------------------------------------------------------

def _same_float(a, b) -> bool:
    return a == b or (math.isnan(a) and math.isnan(b))


@dataclass(frozen=True, eq=False)
class SweepCell:
    test_case: str
    disc: str
    kappa: float
    delta: float
    L: float
    iterations: float
    converged: bool
    observed_rate: float
    delta_star: float

    def __eq__(self, other):
        if not isinstance(other, SweepCell):
            return NotImplemented
        return (self.test_case, self.disc, self.converged) == (other.test_case, other.disc, other.converged) \
            and all(_same_float(getattr(self, k), getattr(other, k))
                    for k in ("kappa", "delta", "L", "iterations", "observed_rate", "delta_star"))

    def __hash__(self):
        return hash((self.test_case, self.disc, self.kappa, self.delta))


@dataclass
class SweepResult:
    """Cells of a sweep; ``constants`` and ``config`` are not part of equality."""

    cells: tuple = ()
    constants: dict = field(default_factory=dict, compare=False)
    config: ExperimentConfig | None = field(default=None, compare=False)

    def kappas(self) -> list:
        return sorted({c.kappa for c in self.cells})

    def curve(self, kappa: float) -> list:
        return sorted((c for c in self.cells if c.kappa == kappa), key=lambda c: c.delta)

    def cell(self, kappa: float, delta: float) -> SweepCell:
        for c in self.cells:
            if c.kappa == kappa and c.delta == delta:
                return c
        raise KeyError((kappa, delta))

    def delta_star(self, kappa: float) -> float:
        return self.curve(kappa)[0].delta_star

    def argmin(self, kappa: float) -> float:
        """Delta with the fewest iterations among converged cells.

        Ties are broken by the smaller observed rate, then by the smaller delta.
        """
        conv = [c for c in self.curve(kappa) if c.converged]
        if not conv:
            return math.nan

        def key(c):
            r = c.observed_rate if np.isfinite(c.observed_rate) else math.inf
            return (c.iterations, r, c.delta)

        return min(conv, key=key).delta

    def argmins(self) -> dict:
        return {k: self.argmin(k) for k in self.kappas()}

    @property
    def all_converged(self) -> bool:
        return all(c.converged for c in self.cells)


# --------------------------------------------------------------------------
# running
# --------------------------------------------------------------------------

def worker_count() -> int:
    """Work-pool size: ``FSL_THREADS`` if set, else the CPU count."""
    env = os.environ.get("FSL_THREADS")
    if env is None or env.strip() == "":
        return max(1, os.cpu_count() or 1)
    try:
        n = int(env)
    except ValueError as exc:
        raise ConfigError(f"FSL_THREADS must be an integer, got {env!r}") from exc
    if n < 1:
        raise ConfigError("FSL_THREADS must be at least 1")
    return n


def build_problem(config: ExperimentConfig, kappa: float) -> biot.BiotProblem:
    if config.test_case == cases.MANDEL:
        return cases.build_case(config.test_case, kappa, config.discretization)
    return cases.build_case(config.test_case, kappa, config.discretization, n=config.mesh_n)


def estimate_constants(config: ExperimentConfig, include_inf_sup: bool = True) -> dict:
    """Scenario constants entering the rate model, from the base (non-random) problem."""
    problem = build_problem(config, config.kappa_list[0])
    ops = biot.assemble_operators(problem)
    K_dr = config.kdr.value(problem.mu, problem.lam, config.test_case)
    if config.C_omega is not None:
        C = float(config.C_omega)
    else:
        C = tuning.estimate_poincare(ops.p_space, ops.p_dirichlet_dofs)
    out = dict(alpha=problem.alpha, M=problem.M, tau=problem.tau, mu=problem.mu, lam=problem.lam,
               K_dr=K_dr, kdr_factor=config.kdr.factor(config.test_case), C_omega=C,
               gamma=None, beta_estimate=None, inf_sup_kernel_dim=None)
    if include_inf_sup or config.beta_mode == "infsup":
        est = tuning.estimate_inf_sup(ops.u_space, ops.p_space, problem.mu, problem.lam,
                                      ops.u_dirichlet_dofs)
        out.update(gamma=est.gamma, beta_estimate=est.beta_estimate, inf_sup_kernel_dim=est.kernel_dim)
    out["beta"] = K_dr if config.beta_mode == "kdr" else out["beta_estimate"]
    return out


def rate_model(constants: dict, kappa: float) -> tuning.RateModel:
    c = constants
    return tuning.RateModel(alpha=c["alpha"], M=c["M"], tau=c["tau"], kappa=kappa,
                            C_omega=c["C_omega"], beta=c["beta"], K_dr=c["K_dr"])


@dataclass
class Scenario:
    """One realization: possibly modified problem, its operators and a guess factory."""

    problem: biot.BiotProblem
    ops: biot.AssembledOperators
    make_guess: object = None


def draw_m5_boundary(tags, rng, p_dirichlet: float = 0.5, max_draws: int = M5_MAX_DRAWS):
    """Random Dirichlet/Neumann split per tag for ``u`` and ``p``.

    Draws are repeated while no displacement tag is Dirichlet.
    """
    for _ in range(max_draws):
        u_mask = rng.random(len(tags)) < p_dirichlet
        p_mask = rng.random(len(tags)) < p_dirichlet
        if u_mask.any():
            return ([t for t, m in zip(tags, u_mask) if m], [t for t, m in zip(tags, p_mask) if m])
    raise RuntimeError(f"no admissible Dirichlet/Neumann split for the displacement in {max_draws} draws")


def _step_table(problem, values):
    def pick(t):
        n = int(round((t - problem.t0) / problem.tau))
        return values[min(max(n, 1), len(values) - 1)]
    return pick


def realize(config: ExperimentConfig, problem: biot.BiotProblem, ops: biot.AssembledOperators,
            r: int) -> Scenario:
    """Apply the configured random modification for realization ``r``."""
    mode = config.random_mode
    if mode is None:
        return Scenario(problem, ops)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, r]))
    s, p_ref = config.random_scale, problem.p_ref
    nu, npr = ops.u_space.num_dofs, ops.p_space.num_dofs

    def uni(order, size=None):
        return rng.uniform(-s * order, s * order, size)

    if mode == "M1":
        def make_guess():
            g = np.random.default_rng(np.random.SeedSequence([config.seed, r]))
            return lambda n, prev: (g.uniform(-s, s, nu), g.uniform(-s * p_ref, s * p_ref, npr))
        return Scenario(problem, ops, make_guess)
    if mode == "M2":
        return Scenario(problem.replace(initial_u=uni(1.0, nu), initial_p=uni(p_ref, npr)), ops)
    if mode == "M3":
        ubcs = []
        for bc in problem.displacement_bcs:
            ubcs.extend(DisplacementBC(bc.tag, (c,), float(uni(1.0))) for c in bc.components)
        pbcs = [PressureBC(bc.tag, float(uni(p_ref))) for bc in problem.pressure_bcs]
        new = problem.replace(displacement_bcs=tuple(ubcs), pressure_bcs=tuple(pbcs))
        return Scenario(new, biot.rebind_operators(ops, new))
    if mode == "M4":
        steps = problem.num_steps + 1
        fv, sv = uni(p_ref, (steps, 2)), uni(1.0, steps)
        f_at, s_at = _step_table(problem, fv), _step_table(problem, sv)

        def f(x, y, t):
            v = f_at(t)
            return np.full(np.shape(x), v[0]), np.full(np.shape(x), v[1])

        def S_f(x, y, t):
            return np.full(np.shape(x), s_at(t))

        return Scenario(problem.replace(f=f, S_f=S_f), ops)
    # M5
    u_tags, p_tags = draw_m5_boundary(problem.mesh.tags, rng)
    new = problem.replace(displacement_bcs=tuple(DisplacementBC(t) for t in u_tags),
                          pressure_bcs=tuple(PressureBC(t) for t in p_tags))
    return Scenario(new, biot.rebind_operators(ops, new))


def run_cell(scenario: Scenario, config: ExperimentConfig, delta: float, K_dr: float):
    """Single fixed-stress run; returns ``(iterations, converged, observed_rate)``."""
    fs = FixedStressConfig(delta=delta, K_dr=K_dr, eps_u_rel=config.eps_u_rel,
                           eps_p_rel=config.eps_p_rel, max_iter=config.max_iter)
    guess = scenario.make_guess() if scenario.make_guess is not None else None
    try:
        _, report = biot.run_time_stepping(scenario.problem, fs, ops=scenario.ops, initial_guess=guess)
    except biot.StepFailure as exc:
        log.warning("run failed at delta=%g: %s", delta, exc)
        return config.max_iter * scenario.problem.num_steps, False, math.nan
    converged = report.converged and len(report.steps) == scenario.problem.num_steps
    try:
        rate = biot.observed_rate(report)
    except biot.UndefinedRateError:
        rate = math.nan
    return report.total_iterations, converged, rate


def _kappa_cells(config: ExperimentConfig, kappa: float, K_dr: float, delta_star: float,
                 problem=None, ops=None) -> list:
    problem = problem or build_problem(config, kappa)
    ops = ops or biot.assemble_operators(problem)
    scenarios = [realize(config, problem, ops, r) for r in range(config.realizations)]
    cells = []
    for delta in config.delta_grid:
        runs = [run_cell(sc, config, delta, K_dr) for sc in scenarios]
        its = float(np.mean([r[0] for r in runs]))
        rates = [r[2] for r in runs if np.isfinite(r[2])]
        cells.append(SweepCell(
            test_case=config.test_case, disc=config.discretization, kappa=float(kappa),
            delta=float(delta), L=problem.alpha ** 2 / (delta * K_dr), iterations=its,
            converged=all(r[1] for r in runs),
            observed_rate=float(np.mean(rates)) if rates else math.nan,
            delta_star=float(delta_star)))
    return cells


def run_sweep(config: ExperimentConfig, constants: dict | None = None) -> SweepResult:
    """Run every ``(kappa, delta)`` cell of ``config``.

    Non-converged runs are recorded in the cells, not raised.  Permeabilities
    are distributed over a thread pool of :func:`worker_count` workers.
    """
    constants = dict(constants) if constants is not None else estimate_constants(config)
    K_dr = constants["K_dr"]
    stars = {k: tuning.optimal_delta(rate_model(constants, k)) for k in config.kappa_list}
    workers = min(worker_count(), len(config.kappa_list))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda k: _kappa_cells(config, k, K_dr, stars[k]), config.kappa_list))
    else:
        parts = [_kappa_cells(config, k, K_dr, stars[k]) for k in config.kappa_list]
    cells = tuple(sorted((c for part in parts for c in part), key=lambda c: (c.kappa, c.delta)))
    constants["delta_star"] = {repr(k): stars[k] for k in config.kappa_list}
    return SweepResult(cells, constants, config)


def run_randomized(config: ExperimentConfig, constants: dict | None = None) -> SweepResult:
    """Sweep averaged over ``num_realizations`` random modifications."""
    if config.random_mode is None:
        raise ConfigError("run_randomized needs random_mode set to one of M1..M5")
    return run_sweep(config, constants)


def run_experiment(config: ExperimentConfig) -> SweepResult:
    return run_sweep(config)


# --------------------------------------------------------------------------
# calibration
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CalibrationResult:
    """Outcome of :func:`calibrate_kdr`.

    ``table`` holds ``(factor, delta_star, empirical_argmin)`` per candidate;
    ``matched`` is False when no candidate came within half a grid step, in
    which case the nearest one is returned and ``warning`` explains.
    """

    factor: float
    K_dr: float
    delta_star: float
    empirical_argmin: float
    matched: bool
    warning: str | None
    table: tuple


def calibrate_kdr(test_case: str, discretization: str = "P2P1", kappa_min: float | None = None,
                  delta_grid=DEFAULT_DELTA_GRID, factors=CALIBRATION_FACTORS,
                  **config_overrides) -> CalibrationResult:
    """Find ``c`` in ``K_dr = c mu + lam`` whose predicted optimum matches the observed one.

    For every candidate a delta sweep at ``kappa_min`` is run with that
    ``K_dr`` (and ``beta = K_dr``); the candidate whose optimal delta lies
    within half a grid step of the empirical argmin is returned, the closest
    such one if several qualify.
    """
    grid = np.asarray(delta_grid, dtype=float)
    if len(grid) < 2:
        raise ConfigError("delta_grid needs at least two points")
    step = float(np.max(np.diff(grid)))
    if step > 0.05 + 1e-12:
        raise ConfigError(f"delta_grid resolution {step} is coarser than 0.05")
    kappa_min = min(cases.case_kappas(test_case)) if kappa_min is None else kappa_min
    base = ExperimentConfig(test_case, discretization, kappa_list=(kappa_min,), delta_grid=tuple(grid),
                            kdr=KdrExpression("factor", float(factors[0])), **config_overrides)
    consts = estimate_constants(base, include_inf_sup=False)
    problem = build_problem(base, kappa_min)
    ops = biot.assemble_operators(problem)

    table = []
    for c in factors:
        cfg = replace(base, kdr=KdrExpression("factor", float(c)))
        K = cfg.kdr.value(problem.mu, problem.lam, test_case)
        cst = dict(consts, K_dr=K, beta=K)
        star = tuning.optimal_delta(rate_model(cst, kappa_min))
        res = SweepResult(tuple(_kappa_cells(cfg, kappa_min, K, star, problem, ops)))
        table.append((float(c), float(star), float(res.argmin(kappa_min))))

    gaps = [abs(s - e) if np.isfinite(e) else math.inf for _, s, e in table]
    best = int(np.argmin(gaps))
    matched = gaps[best] <= 0.5 * step + 1e-12
    warning = None if matched else (
        f"no factor matched within half a grid step; nearest gap {gaps[best]:.3g}")
    if warning:
        log.warning(warning)
    c, star, emp = table[best]
    return CalibrationResult(c, c * problem.mu + problem.lam, star, emp, matched, warning, tuple(table))


# --------------------------------------------------------------------------
# checks
# --------------------------------------------------------------------------

def rate_bound_violations(result: SweepResult, slack: float = 0.05) -> list:
    """Converged cells with ``delta <= 2`` whose observed rate exceeds ``sqrt(rate) + slack``."""
    bad = []
    for c in result.cells:
        if not (c.converged and c.delta <= 2.0 and np.isfinite(c.observed_rate)):
            continue
        bound = tuning.theoretical_rate(rate_model(result.constants, c.kappa), c.delta, c.L)
        if c.observed_rate > math.sqrt(bound) + slack:
            bad.append((c, bound))
    return bad


def is_nondecreasing(values) -> bool:
    v = np.asarray(values, dtype=float)
    return bool(np.all(np.diff(v) >= 0))


# --------------------------------------------------------------------------
# outputs
# --------------------------------------------------------------------------

def _num(x: float) -> str:
    return f"{x:.17e}"


def write_sweep_csv(result: SweepResult, path) -> Path:
    path = Path(path)
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for c in result.cells:
                w.writerow([c.test_case, c.disc, _num(c.kappa), _num(c.delta), _num(c.L),
                            _num(c.iterations), "true" if c.converged else "false",
                            _num(c.observed_rate), _num(c.delta_star)])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def read_sweep_csv(path) -> SweepResult:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise ValueError(f"{path}: unexpected header")
    cells = []
    for row in rows[1:]:
        tc, disc, kappa, delta, L, its, conv, rate, star = row
        cells.append(SweepCell(tc, disc, float(kappa), float(delta), float(L), float(its),
                               conv == "true", float(rate), float(star)))
    return SweepResult(tuple(cells))


_PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


def _star_points(cx, cy, r_out=9.0, r_in=4.0):
    pts = []
    for k in range(10):
        r = r_out if k % 2 == 0 else r_in
        a = -math.pi / 2 + k * math.pi / 5
        pts.append(f"{cx + r * math.cos(a):.2f},{cy + r * math.sin(a):.2f}")
    return " ".join(pts)


def write_sweep_svg(result: SweepResult, path, width: int = 800, height: int = 600) -> Path:
    """Iterations against delta, one polyline and one star (at delta*) per kappa."""
    left, right, top, bottom = 70, 170, 40, 60
    kappas = result.kappas()
    deltas = [c.delta for c in result.cells] + [c.delta_star for c in result.cells]
    its = [c.iterations for c in result.cells if c.converged]
    x0, x1 = (min(deltas), max(deltas)) if deltas else (1.0, 2.5)
    if x1 <= x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    y1 = max(its) * 1.05 if its else 1.0

    def sx(d):
        return left + (d - x0) / (x1 - x0) * (width - left - right)

    def sy(n):
        return height - bottom - n / y1 * (height - top - bottom)

    title = ""
    if result.cells:
        title = f"{result.cells[0].test_case} {result.cells[0].disc}"
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2:.1f}" y="22" text-anchor="middle" font-size="16">{title}</text>',
           f'<line x1="{left}" y1="{height - bottom}" x2="{width - right}" y2="{height - bottom}" stroke="black"/>',
           f'<line x1="{left}" y1="{top}" x2="{left}" y2="{height - bottom}" stroke="black"/>']
    for d in np.linspace(x0, x1, 6):
        out.append(f'<text x="{sx(d):.2f}" y="{height - bottom + 18}" text-anchor="middle" '
                   f'font-size="12">{d:.2f}</text>')
    for n in np.linspace(0, y1, 6):
        out.append(f'<text x="{left - 8}" y="{sy(n) + 4:.2f}" text-anchor="end" font-size="12">{n:.0f}</text>')
    out.append(f'<text x="{(left + width - right) / 2:.1f}" y="{height - 15}" text-anchor="middle" '
               f'font-size="14">delta</text>')
    out.append(f'<text x="18" y="{(top + height - bottom) / 2:.1f}" text-anchor="middle" font-size="14" '
               f'transform="rotate(-90 18 {(top + height - bottom) / 2:.1f})">total iterations</text>')
    for i, k in enumerate(kappas):
        color = _PALETTE[i % len(_PALETTE)]
        conv = [c for c in result.curve(k) if c.converged]
        pts = " ".join(f"{sx(c.delta):.2f},{sy(c.iterations):.2f}" for c in conv)
        out.append(f'<polyline class="series" data-kappa="{k:.3e}" fill="none" stroke="{color}" '
                   f'stroke-width="2" points="{pts}"/>')
        star = result.delta_star(k)
        ys = np.interp(star, [c.delta for c in conv], [c.iterations for c in conv]) if conv else 0.0
        out.append(f'<polygon class="star" data-kappa="{k:.3e}" fill="{color}" stroke="black" '
                   f'points="{_star_points(sx(star), sy(ys))}"/>')
        ly = top + 20 + 22 * i
        lx = width - right + 20
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 25}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 32}" y="{ly + 4}" font-size="12">log10 kappa = {math.log10(k):.1f}</text>')
    out.append("</svg>")
    path = Path(path)
    try:
        path.write_text("\n".join(out) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def write_run_json(result: SweepResult, path) -> Path:
    cfg = result.config
    doc = {
        "config": cfg.to_dict() if cfg is not None else None,
        "seeds": None if cfg is None or cfg.random_mode is None
        else [[cfg.seed, r] for r in range(cfg.realizations)],
        "constants": result.constants,
        "argmin": {repr(k): v for k, v in result.argmins().items()},
        "all_converged": result.all_converged,
    }
    path = Path(path)
    try:
        path.write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def emit_outputs(result: SweepResult, output_dir) -> dict:
    """Write ``sweep.csv``, ``sweep.svg`` and ``run.json`` into ``output_dir``."""
    out = Path(output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create {out}: {exc}") from exc
    return {
        "csv": write_sweep_csv(result, out / "sweep.csv"),
        "svg": write_sweep_svg(result, out / "sweep.svg"),
        "json": write_run_json(result, out / "run.json"),
    }
