"""Predicted contraction rate against delta, and where the optimum sits as the
permeability grows.

    python demos/rate_model.py
"""

import numpy as np

from fixedstress import cases, harness, tuning

config = harness.ExperimentConfig(cases.UNIT_SQUARE_SETUP1)
constants = harness.estimate_constants(config)
print(f"C_omega = {constants['C_omega']:.4f}, K_dr = {constants['K_dr']:.4e}, "
      f"inf-sup gamma = {constants['gamma']:.4e}")

deltas = np.linspace(0.5, 2.0, 7)
print("kappa     delta*  " + "  ".join(f"{d:5.2f}" for d in deltas))
for kappa in config.kappa_list:
    model = harness.rate_model(constants, kappa)
    rates = [tuning.theoretical_rate(model, d) for d in deltas]
    print(f"{kappa:.0e}  {tuning.optimal_delta(model):6.4f}  " + "  ".join(f"{r:5.3f}" for r in rates))
