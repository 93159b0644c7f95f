"""Fixed-stress splitting for quasi-static linear Biot poroelasticity in 2D.

Modules
-------
mesh      structured triangulations with tagged boundaries
fem       P1/P2 spaces, quadrature, assembly, Dirichlet elimination
biot      scenarios, monolithic and fixed-stress time stepping
tuning    convergence-rate model, optimal stabilisation, numerical constants
mandel    closed-form Mandel solution and its scenario
cases     the benchmark scenarios
harness   sweeps, randomized runs, calibration and output files
"""

from .biot import (BiotProblem, DiscreteState, DisplacementBC, FixedStressConfig, IterationReport,
                   PressureBC, assemble_operators, observed_rate, run_time_stepping,
                   solve_fixed_stress_step, solve_monolithic_step)
from .fem import FunctionSpace
from .mesh import Mesh, build_l_shape_mesh, build_rectangle_mesh, build_unit_square_mesh
from .tuning import RateModel, optimal_delta, optimal_L, theoretical_rate

__version__ = "0.1.0"

__all__ = [
    "BiotProblem", "DiscreteState", "DisplacementBC", "FixedStressConfig", "FunctionSpace",
    "IterationReport", "Mesh", "PressureBC", "RateModel", "assemble_operators",
    "build_l_shape_mesh", "build_rectangle_mesh", "build_unit_square_mesh", "observed_rate",
    "optimal_L", "optimal_delta", "run_time_stepping", "solve_fixed_stress_step",
    "solve_monolithic_step", "theoretical_rate",
]
