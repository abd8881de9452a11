#!/usr/bin/env python3
"""Regenerate the committed test fixtures.

Produces:
  tests/fixtures/golden/            byte-identity reference for a small grid run
  plots/tests/fixtures/run-grid/    grid run consumed by the figure renderer
  plots/tests/fixtures/sweep-mass/  mass-dichotomy sweep for the dichotomy map
  plots/tests/fixtures/sweep-eps/   epsilon sweep for the convergence figure

Run from the repository root:  python3 scripts/regenerate_fixtures.py
"""

import json
import os
import shutil
import sys

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, os.path.join(ROOT, "src"))

from manevlab import cli  # noqa: E402

GOLDEN_CONFIG = {
    "name": "golden",
    "solver": "phase-grid",
    "kernel": {"family": "power-law", "c_manev": 1.0, "alpha": 1.0,
               "epsilon": 0.2, "dim": 1},
    "initial": {"mass": 0.5},
    "sigma": 1.0, "dt": 0.05, "t_end": 0.3, "cadence": 0.1,
    "grid": {"d": 1, "n_x": 32, "n_v": 32, "L_x": 6.0, "L_v": 6.0},
    "seed": 0,
}

PLOT_GRID_CONFIG = {
    "name": "run-grid",
    "solver": "phase-grid",
    "kernel": {"family": "power-law", "c_manev": 1.0, "alpha": 1.0,
               "epsilon": 0.1, "dim": 1},
    "initial": {"mass": 0.5, "position_scale": 1.6, "velocity_scale": 1.6},
    "sigma": 1.0, "dt": 0.02, "t_end": 1.0, "cadence": 0.1,
    "grid": {"d": 1, "n_x": 64, "n_v": 64, "L_x": 8.0, "L_v": 8.0},
    "seed": 0,
}

PLOT_MASS_CONFIG = {
    "name": "sweep-mass",
    "solver": "particles",
    "kernel": {"family": "pure-manev", "c_manev": 1.0, "epsilon": 0.001},
    "initial": {"family": "gaussian-gaussian", "mass": 1.0},
    "sigma": 0.0, "dt": 0.002, "t_end": 3.0, "cadence": 0.25,
    "n_particles": 1024, "seed": 11,
    "guards": {"energy_ratio_max": 10.0},
}

PLOT_EPS_CONFIG = {
    "name": "sweep-eps",
    "solver": "phase-grid",
    "kernel": {"family": "power-law", "c_manev": 1.0, "alpha": 0.5,
               "epsilon": 0.2, "dim": 1},
    "initial": {"mass": 0.5},
    "sigma": 1.0, "dt": 0.02, "t_end": 0.5, "cadence": 0.25,
    "grid": {"d": 1, "n_x": 64, "n_v": 64, "L_x": 8.0, "L_v": 8.0},
    "seed": 0,
}


def fresh(path):
    shutil.rmtree(path, ignore_errors=True)
    os.makedirs(path, exist_ok=True)
    return path


def main():
    golden = fresh(os.path.join(ROOT, "tests", "fixtures", "golden"))
    with open(os.path.join(golden, "config.json"), "w") as fh:
        json.dump(GOLDEN_CONFIG, fh, indent=2, sort_keys=True)
        fh.write("\n")
    cli.run_scenario(cli.validate_config(GOLDEN_CONFIG),
                     os.path.join(golden, "expected"))

    plot_fixtures = os.path.join(ROOT, "plots", "tests", "fixtures")
    cli.run_scenario(cli.validate_config(PLOT_GRID_CONFIG),
                     fresh(os.path.join(plot_fixtures, "run-grid")))
    cli.sweep_mass(cli.validate_config(PLOT_MASS_CONFIG), [0.5, 1.0, 8.0, 12.0],
                   fresh(os.path.join(plot_fixtures, "sweep-mass")))
    cli.sweep_epsilon(cli.validate_config(PLOT_EPS_CONFIG), [0.2, 0.1, 0.05],
                      fresh(os.path.join(plot_fixtures, "sweep-eps")))
    print("fixtures regenerated")


if __name__ == "__main__":
    main()
