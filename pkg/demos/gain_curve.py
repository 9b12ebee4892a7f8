"""
Parametric gain: output power against pump power
================================================

Pair rates from simulated singles, converted to power, fitted with the
sinh^2 gain law.
"""

import subprocess
import sys
import tempfile
from pathlib import Path

from spdcsim.runner import read_columns, report

config = Path(__file__).parent / "configs" / "gain_sweep.json"

# %% The same run through the command line
with tempfile.TemporaryDirectory() as tmp:
    out = Path(tmp) / "gain"
    subprocess.run([sys.executable, "-m", "spdcsim.cli", "simulate", str(config), "--out", str(out)], check=True)
    table = read_columns(out / "gain.csv")
    print(" pump (mW)   SPDC (mW)    efficiency   model (mW)")
    for p, s, e, m in zip(table["pump_power_mw"], table["spdc_power_mw"], table["efficiency"], table["model_mw"]):
        print(f"{p:9.1f} {s:11.4g} {e:13.4g} {m:12.4g}")
    print(report(out))
