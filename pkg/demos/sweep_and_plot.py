"""Sweep delta for every permeability of the clamped unit square and write
the CSV/SVG/JSON outputs next to this script.

    python demos/sweep_and_plot.py
"""

from pathlib import Path

from fixedstress import harness

here = Path(__file__).parent
config = harness.load_config(here / "setup1_sweep.cfg")
result = harness.run_sweep(config)

print(f"{'kappa':>8}  {'delta*':>7}  {'argmin':>6}  {'iterations':>10}")
for kappa in result.kappas():
    best = result.cell(kappa, result.argmin(kappa))
    print(f"{kappa:8.0e}  {result.delta_star(kappa):7.4f}  {best.delta:6.2f}  {best.iterations:10.0f}")

paths = harness.emit_outputs(result, here / config.output_dir)
print("wrote", ", ".join(str(p) for p in paths.values()))
