"""
Heralded-free g2 and the number of spectral modes
=================================================

One arm of the source split onto two detectors. A single-mode
thermal field gives g2(0) = 2; more modes push it toward 1.
"""

import dataclasses
from pathlib import Path

from spdcsim.config import load_config
from spdcsim.experiments import point_config, simulate_hbt
from spdcsim.montecarlo import HbtGeometry
from spdcsim.physics import g2_from_modes

setup = load_config(Path(__file__).parent / "configs" / "hbt.json")
base = setup.base

for i, m in enumerate(setup.plan.sweep_values):
    cfg = point_config(base, i, source=dataclasses.replace(base.source, mode_count=m), geometry=HbtGeometry())
    est = simulate_hbt(cfg).estimate
    print(f"M = {m:4.1f}: g2 = {est.g2:.3f} +- {est.sigma_g2:.3f} (expected {g2_from_modes(m):.3f}), "
          f"M fit = {est.modes:.2f} +- {est.sigma_modes:.2f}")
