"""Command-line interface.

Exit codes: 0 success, 2 config error, 3 numerical error, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, load_config
from .estimators import fit_car_curve, fit_hom_dip, fit_spdc_power, optimal_chsh_angles
from .fitting import FitError
from .runner import RunError, analyze, read_columns, report, run
from .tagio import atomic_write

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


def _columns(path, *names):
    data = read_columns(path)
    missing = [n for n in names if n not in data]
    if missing:
        raise ConfigError(f"{path}: missing columns {missing}; found {sorted(data)}")
    return data


def _fit(args):
    path = args.data
    if args.kind == "gain":
        d = _columns(path, "pump_power_mw", "spdc_power_mw")
        rep = fit_spdc_power(d["pump_power_mw"], d["spdc_power_mw"])
    elif args.kind == "hom":
        d = _columns(path, "delay_ps", "coincidences")
        rep = fit_hom_dip(d["delay_ps"] * 1e-12, d["coincidences"])
    else:
        d = _columns(path, "mean_pairs_per_pulse", "car")
        if None in (args.eta1, args.eta2):
            raise ConfigError("car fits need --eta1 and --eta2")
        win = args.window_ps * 1e-12
        w = 1 / d["car_sigma"] if "car_sigma" in d else None
        rep = fit_car_curve(
            d["mean_pairs_per_pulse"], d["car"], args.eta1, args.eta2, args.dark1_hz * win, args.dark2_hz * win, w,
            mode_count=math.inf if args.mode_count is None else args.mode_count,
        )
    text = rep.to_json()
    if args.out:
        atomic_write(Path(args.out), text)
    sys.stdout.write(text)


def _simulate(args):
    setup = load_config(args.config, seed=args.seed, pulses=args.pulses, out=args.out)
    manifest = run(setup, emit_tags=args.emit_tags)
    out = Path(setup.plan.output_dir)
    print(f"wrote {len(manifest.artifact_paths)} artifacts to {out}")
    sys.stdout.write(report(out))


def _analyze(args):
    analyze(args.dir)
    sys.stdout.write(report(args.dir))


def _report(args):
    sys.stdout.write(report(args.dir))


def _bell_angles(args):
    if not 0 < args.visibility <= 1:
        raise ConfigError("--visibility must lie in (0, 1]")
    print(json.dumps(optimal_chsh_angles(args.visibility).to_dict(), indent=2, sort_keys=True))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spdcsim", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run a config file and analyze the result")
    s.add_argument("config")
    s.add_argument("--seed", type=int, help="override the plan seed")
    s.add_argument("--pulses", type=int, help="override pulses per point")
    s.add_argument("--out", help="output directory (default: plan output_dir)")
    s.add_argument("--emit-tags", action="store_true", help="also write binary tag streams")
    s.set_defaults(func=_simulate)

    a = sub.add_parser("analyze", help="recompute results from a run directory's raw data")
    a.add_argument("dir")
    a.set_defaults(func=_analyze)

    f = sub.add_parser("fit", help="fit a model to a CSV data file")
    f.add_argument("kind", choices=["gain", "car", "hom"])
    f.add_argument("data")
    f.add_argument("--out", help="also write the fit report JSON here")
    f.add_argument("--eta1", type=float, help="car: channel 1 efficiency")
    f.add_argument("--eta2", type=float, help="car: measured channel 2 efficiency")
    f.add_argument("--dark1-hz", type=float, default=0.0)
    f.add_argument("--dark2-hz", type=float, default=0.0)
    f.add_argument("--window-ps", type=float, default=2560.0)
    f.add_argument("--mode-count", type=float, help="car: mode number (default: Poissonian)")
    f.set_defaults(func=_fit)

    r = sub.add_parser("report", help="summarize a completed run")
    r.add_argument("dir")
    r.set_defaults(func=_report)

    b = sub.add_parser("bell-angles", help="CHSH-optimal analyzer angles for a Werner state")
    b.add_argument("--visibility", type=float, required=True)
    b.set_defaults(func=_bell_angles)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RunError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (FitError, ValueError, ArithmeticError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
