"""Numerical Mandel pressure along the horizontal midline against the series
solution, at each time level.

    python demos/mandel_profile.py
"""

import numpy as np

from fixedstress import biot, cases, mandel

params = mandel.MANDEL_PARAMETERS
roots = mandel.mandel_roots(params.nu, params.nu_u, params.n_terms)
problem = cases.build_case(cases.MANDEL, 1e-10)
ops = biot.assemble_operators(problem)
config = biot.FixedStressConfig(delta=1.3, K_dr=cases.kdr_value(problem, 1.35))
states, report = biot.run_time_stepping(problem, config, ops)

xy = ops.p_space.node_coords
line = np.isclose(xy[:, 1], params.b / 2)
order = np.argsort(xy[line, 0])
x = xy[line, 0][order]
for state, step in zip(states[1:], report.steps):
    t = problem.time(state.time_index)
    exact = mandel.mandel_pressure(params, roots, x, t)
    numeric = state.p[line][order]
    err = np.sqrt(np.trapezoid((numeric - exact) ** 2, x) / np.trapezoid(exact ** 2, x))
    print(f"t = {t:5.1f}  iterations {step.iterations:3d}  p(0) = {numeric[0]:.4e}  "
          f"series {exact[0]:.4e}  relative L2 error {err:.2%}")
