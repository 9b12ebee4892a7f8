"""Run orchestration: simulate a plan, analyze its raw data, summarize.

A run directory holds ``config.json`` (the canonical config document),
raw per-point data, derived results and ``manifest.json``. ``run`` writes
the raw data and then calls ``analyze`` on the directory; ``analyze`` only
reads files, so rerunning it reproduces the derived results exactly.
"""

from __future__ import annotations

import dataclasses
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import constants

from . import __version__
from .config import ConfigError, PlanKind, Setup, gain_params, hom_geometry, parse_config
from .estimators import (
    BellCounts,
    chsh_S,
    fit_car_curve,
    fit_hom_dip,
    fit_spdc_power,
    g2_zero_estimate,
    hom_params,
    mu_from_singles,
    optimal_chsh_angles,
    visibility_conservative,
)
from .experiments import FINE_BIN_PS, analyze_car, point_config, simulate_bell
from .fitting import FitError
from .montecarlo import CoincidenceGeometry, HbtGeometry, simulate
from .physics import car_model, hom_profile, spdc_power
from .tagio import atomic_write, encode_tags_binary, read_tags_binary
from .timetags import car_from_histogram, count_coincidences, read_histogram_csv, write_histogram_csv

__all__ = ["RunManifest", "RunError", "run", "analyze", "report", "load_manifest", "bell_angles", "read_columns"]

MANIFEST = "manifest.json"
CONFIG = "config.json"
DEFAULT_WAVELENGTH_NM = 2090.0


class RunError(RuntimeError):
    """A run directory is missing, incomplete or corrupt."""


@dataclass
class RunManifest:
    config_hash: str
    seed: int
    kind: str
    artifact_paths: list[str] = field(default_factory=list)
    tool_version: str = __version__
    wall_time: float = 0.0

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        d = json.loads(text)
        return cls(**{f.name: d[f.name] for f in dataclasses.fields(cls)})


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _clean(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def _csv(header, rows) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(repr(float(x)) if isinstance(x, float) else str(x) for x in row))
    return "\n".join(lines) + "\n"


def read_columns(path):
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return {h: data[:, i] for i, h in enumerate(header)}


class _Writer:
    def __init__(self, root: Path):
        self.root = root
        self.paths: list[str] = []

    def write(self, rel: str, data) -> None:
        path = self.root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        atomic_write(path, data)
        if rel not in self.paths:
            self.paths.append(rel)


def _window(setup: Setup) -> int:
    if setup.plan.window_ps is not None:
        return setup.plan.window_ps
    return int(round(setup.base.channels.coincidence_window * 1e12))


# ---------------------------------------------------------------------------
# run


def run(setup: Setup, *, emit_tags: bool = False, out=None) -> RunManifest:
    """Simulate every point of the plan into ``out`` (default: the plan's output dir)."""
    t0 = time.perf_counter()
    root = Path(out if out is not None else setup.plan.output_dir)
    root.mkdir(parents=True, exist_ok=True)
    w = _Writer(root)
    w.write(CONFIG, json.dumps(setup.document, indent=2, sort_keys=True) + "\n")
    _SIMULATORS[setup.plan.kind](setup, w, emit_tags)
    paths = analyze(root, _writer=w)
    manifest = RunManifest(
        config_hash=setup.config_hash,
        seed=setup.base.seed,
        kind=setup.plan.kind.value,
        artifact_paths=sorted(set(paths) | {CONFIG}),
        wall_time=time.perf_counter() - t0,
    )
    atomic_write(root / MANIFEST, manifest.to_json())
    return manifest


def _sim_car(setup, w, emit_tags):
    base, plan = setup.base, setup.plan
    window = _window(setup)
    if window % FINE_BIN_PS:
        raise ConfigError(f"CAR window must be a multiple of {FINE_BIN_PS} ps")
    for i, mu in enumerate(plan.sweep_values):
        cfg = point_config(base, i, source=dataclasses.replace(base.source, mean_pairs_per_pulse=mu), geometry=CoincidenceGeometry())
        s1, s2 = simulate(cfg)
        d = f"point_{i:03d}"
        if emit_tags:
            w.write(f"{d}/tags.bin", encode_tags_binary([s1, s2]))
        res = analyze_car(s1, s2, cfg.duration, cfg.period_ps, rebin_factor=window // FINE_BIN_PS)
        w.write(f"{d}/histogram_fine.csv", write_histogram_csv(res.fine))
        w.write(f"{d}/histogram.csv", write_histogram_csv(res.coarse))
        w.write(f"{d}/singles.json", _dump({"mean_pairs_per_pulse": mu, "singles_hz": list(res.singles), "duration_s": cfg.duration}))


def _sim_hom(setup, w, emit_tags):
    base, plan = setup.base, setup.plan
    window = _window(setup)
    geo = hom_geometry(plan)
    rows = []
    for i, d_ps in enumerate(plan.sweep_values):
        cfg = point_config(base, i, geometry=dataclasses.replace(geo, delay=d_ps * 1e-12))
        s1, s2 = simulate(cfg)
        if emit_tags:
            w.write(f"point_{i:03d}/tags.bin", encode_tags_binary([s1, s2]))
        rows.append((float(d_ps), count_coincidences(s1, s2, -window // 2, window // 2)))
    w.write("hom_counts.csv", _csv(["delay_ps", "coincidences"], rows))


def bell_angles(setup: Setup):
    a = setup.plan.options.get("angles_rad", "optimal")
    if a == "optimal":
        ang = optimal_chsh_angles(setup.base.source.state_visibility)
        return ang.theta_a, ang.theta_a_prime, ang.theta_b, ang.theta_b_prime
    return tuple(float(x) for x in a)


def _sim_bell(setup, w, emit_tags):
    window = _window(setup)
    res = simulate_bell(setup.base, *bell_angles(setup), window_ps=window)
    w.write("bell_counts.json", res.counts.to_json())
    w.write(
        "bell_rates.json",
        _dump(
            {
                "duration_per_setting_s": res.duration,
                "mean_singles_hz": float(res.singles.mean()),
                "singles_hz": res.singles.tolist(),
                "mean_coincidence_rate_hz": float(res.coincidence_rate.mean()),
            }
        ),
    )


def _sim_hbt(setup, w, emit_tags):
    base, plan = setup.base, setup.plan
    window = _window(setup)
    modes = plan.sweep_values or (base.source.mode_count,)
    rows = []
    for i, m in enumerate(modes):
        if plan.sweep_values:
            cfg = point_config(base, i, source=dataclasses.replace(base.source, mode_count=m), geometry=HbtGeometry())
        else:
            cfg = dataclasses.replace(base, geometry=HbtGeometry())
        s1, s2 = simulate(cfg)
        if emit_tags:
            w.write(f"point_{i:03d}/tags.bin", encode_tags_binary([s1, s2]))
        c = count_coincidences(s1, s2, -window // 2, window // 2)
        rows.append((float(m), len(s1), len(s2), c, cfg.pulse_count))
    w.write("hbt_counts.csv", _csv(["mode_count", "singles1", "singles2", "coincidences", "pulses"], rows))


def _photon_energy(plan) -> float:
    lam = float(plan.options.get("wavelength_nm", DEFAULT_WAVELENGTH_NM)) * 1e-9
    return constants.h * constants.c / lam


def _sim_gain(setup, w, emit_tags):
    base, plan = setup.base, setup.plan
    rep = base.channels.rep_rate
    e_ph = _photon_energy(plan)
    rows = []
    for i, p_mw in enumerate(plan.sweep_values):
        # Each pair carries two photons; spdc_power is in mW.
        mu = spdc_power(gain_params(plan, p_mw)) * 1e-3 / (2 * e_ph * rep)
        cfg = point_config(base, i, source=dataclasses.replace(base.source, mean_pairs_per_pulse=mu), geometry=CoincidenceGeometry())
        s1, s2 = simulate(cfg)
        if emit_tags:
            w.write(f"point_{i:03d}/tags.bin", encode_tags_binary([s1, s2]))
        rows.append((float(p_mw), len(s1), len(s2), cfg.duration))
    w.write("gain_raw.csv", _csv(["pump_power_mw", "singles1", "singles2", "duration_s"], rows))


_SIMULATORS = {
    PlanKind.CAR_SWEEP: _sim_car,
    PlanKind.HOM: _sim_hom,
    PlanKind.BELL: _sim_bell,
    PlanKind.HBT: _sim_hbt,
    PlanKind.GAIN_SWEEP: _sim_gain,
}


# ---------------------------------------------------------------------------
# analyze


def _load_setup(root: Path) -> Setup:
    path = root / CONFIG
    if not path.is_file():
        raise RunError(f"{path}: no config.json; not a run directory")
    try:
        return parse_config(json.loads(path.read_text(encoding="utf-8")))
    except json.JSONDecodeError as exc:
        raise RunError(f"{path}: corrupt config ({exc})") from exc


def analyze(root, *, _writer: _Writer | None = None) -> list[str]:
    """Derive results from the raw data in a run directory; returns written paths."""
    root = Path(root)
    setup = _load_setup(root)
    w = _writer or _Writer(root)
    try:
        _ANALYZERS[setup.plan.kind](setup, root, w)
    except FileNotFoundError as exc:
        raise RunError(f"missing raw data: {exc.filename}") from exc
    return list(w.paths)


def _fit_dict(fun, *args, **kwargs) -> dict:
    try:
        return fun(*args, **kwargs).to_dict()
    except FitError as exc:
        return {"skipped": str(exc)}


def _analyze_car(setup, root, w):
    base, plan = setup.base, setup.plan
    window = _window(setup)
    e1, e2 = base.channels.transmission
    d1, d2 = (r * window * 1e-12 for r in base.channels.dark_rate)
    # Simulated darks run free over the whole period.
    ratio = base.period_ps / window
    rows = []
    for i, mu in enumerate(plan.sweep_values):
        d = root / f"point_{i:03d}"
        tags = d / "tags.bin"
        info = json.loads((d / "singles.json").read_text(encoding="utf-8"))
        if tags.is_file():
            st = read_tags_binary(tags)
            res = analyze_car(st[1], st[2], info["duration_s"], base.period_ps, rebin_factor=window // FINE_BIN_PS)
            fine = res.fine
            w.write(f"point_{i:03d}/histogram_fine.csv", write_histogram_csv(fine))
            w.write(f"point_{i:03d}/histogram.csv", write_histogram_csv(res.coarse))
        else:
            fine = read_histogram_csv(d / "histogram_fine.csv")
        car = car_from_histogram(fine, base.period_ps, window)
        w.write(f"point_{i:03d}/car.json", _dump(car.to_dict()))
        model = car_model(mu, e1, e2, d1, d2, base.source.mode_count, period_over_window=ratio) if (mu * e1 + d1) * (mu * e2 + d2) > 0 else math.nan
        s1, s2 = info["singles_hz"]
        rows.append((mu, float(s1), float(s2), float(car.car), float(car.stat_uncertainty), float(model)))
    w.write("car_sweep.csv", _csv(["mean_pairs_per_pulse", "singles1_hz", "singles2_hz", "car", "car_sigma", "car_model"], rows))
    pts = [(r[0], r[3], r[4]) for r in rows if math.isfinite(r[3]) and math.isfinite(r[4]) and r[4] > 0]
    if len(pts) >= 3 and d2 > 0:
        mu_a, car_a, sig_a = map(np.array, zip(*pts))
        fit = _fit_dict(fit_car_curve, mu_a, car_a, e1, e2, d1, d2, 1 / sig_a, mode_count=base.source.mode_count, period_over_window=ratio)
    else:
        fit = {"skipped": "need three points with finite CAR and a nonzero dark rate on channel 2"}
    w.write("car_fit.json", _dump(fit))


def _analyze_hom(setup, root, w):
    data = read_columns(root / "hom_counts.csv")
    delays_ps, counts = data["delay_ps"], data["coincidences"]
    try:
        fit = fit_hom_dip(delays_ps * 1e-12, counts)
    except FitError as exc:
        w.write("hom_fit.json", _dump({"skipped": str(exc)}))
        return
    out = fit.to_dict()
    out["visibility_fit"] = _clean(float(fit.params["visibility"]))
    out["visibility_conservative"] = _clean(float(visibility_conservative(counts, fit)))
    w.write("hom_fit.json", _dump(out))
    model = hom_profile(delays_ps * 1e-12, hom_params(fit))
    w.write("hom_scan.csv", _csv(["delay_ps", "coincidences", "model"], zip(delays_ps.tolist(), counts.astype(int).tolist(), np.asarray(model, float).tolist())))


def _analyze_bell(setup, root, w):
    counts = BellCounts.from_json((root / "bell_counts.json").read_text(encoding="utf-8"))
    w.write("chsh.json", chsh_S(counts).to_json())
    rows = [(ta, tb, int(counts.counts[i, j])) for i, j, ta, tb in counts.settings()]
    w.write("bell_settings.csv", _csv(["theta_a_rad", "theta_b_rad", "coincidences"], rows))


def _analyze_hbt(setup, root, w):
    data = read_columns(root / "hbt_counts.csv")
    results, rows = [], []
    for m, n1, n2, c, p in zip(*(data[k] for k in ("mode_count", "singles1", "singles2", "coincidences", "pulses"))):
        est = g2_zero_estimate(int(n1), int(n2), int(c), int(p))
        results.append({"mode_count_true": _clean(float(m)), **est.to_dict()})
        rows.append((float(m), float(est.g2), float(est.sigma_g2), float(est.modes)))
    w.write("hbt.json", _dump(results))
    w.write("g2.csv", _csv(["mode_count_true", "g2", "sigma_g2", "modes"], rows))


def _analyze_gain(setup, root, w):
    base, plan = setup.base, setup.plan
    data = read_columns(root / "gain_raw.csv")
    rep = base.channels.rep_rate
    e_ph = _photon_energy(plan)
    mus = [
        mu_from_singles(data[f"singles{k + 1}"] / data["duration_s"], base.channels.dark_rate[k], rep, base.channels.transmission[k])
        for k in range(2)
    ]
    mu = 0.5 * (mus[0] + mus[1])
    p_mw = mu * 2 * e_ph * rep * 1e3
    pump = data["pump_power_mw"]
    ok = p_mw > 0
    fit = _fit_dict(fit_spdc_power, pump[ok], p_mw[ok]) if ok.sum() >= 3 else {"skipped": "need three points with positive power"}
    w.write("gain_fit.json", _dump(fit))
    rows = []
    for pp, ps in zip(pump.tolist(), p_mw.tolist()):
        model = math.nan
        if "params" in fit:
            a, g = fit["params"]["alpha"], fit["params"]["gamma"]
            model = a * math.sinh(g * math.sqrt(pp)) ** 2
        rows.append((pp, ps, ps / pp, model))
    w.write("gain.csv", _csv(["pump_power_mw", "spdc_power_mw", "efficiency", "model_mw"], rows))


_ANALYZERS = {
    PlanKind.CAR_SWEEP: _analyze_car,
    PlanKind.HOM: _analyze_hom,
    PlanKind.BELL: _analyze_bell,
    PlanKind.HBT: _analyze_hbt,
    PlanKind.GAIN_SWEEP: _analyze_gain,
}


# ---------------------------------------------------------------------------
# report


def load_manifest(root) -> RunManifest:
    path = Path(root) / MANIFEST
    if not path.is_file():
        raise RunError(f"{path}: no manifest; not a completed run directory")
    try:
        return RunManifest.from_json(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise RunError(f"{path}: corrupt manifest ({exc})") from exc


def _pm(v, s, fmt=".4g") -> str:
    if v is None:
        return "undefined"
    if s is None:
        return f"{v:{fmt}}"
    return f"{v:{fmt}} ± {s:{fmt}}"


def _fit_lines(fit: dict, units: dict | None = None) -> list[str]:
    if "skipped" in fit:
        return [f"fit skipped: {fit['skipped']}"]
    units = units or {}
    lines = [f"  {k} = {_pm(v, fit['sigmas'].get(k))}{units.get(k, '')}" for k, v in fit["params"].items()]
    state = "converged" if fit["converged"] else "NOT converged (" + ", ".join(fit["flags"]) + ")"
    return lines + [f"  fit {state}, scaled gradient {fit['gradient_norm']:.2e}"]


def report(root) -> str:
    """Human-readable summary of a completed run."""
    root = Path(root)
    m = load_manifest(root)
    lines = [f"{m.kind} run, seed {m.seed}, config {m.config_hash[:12]}, {m.wall_time:.1f} s"]
    try:
        lines += _REPORTERS[PlanKind(m.kind)](root)
    except (FileNotFoundError, json.JSONDecodeError, KeyError) as exc:
        raise RunError(f"{root}: incomplete run results ({exc})") from exc
    except ValueError as exc:
        raise RunError(f"{root}: unknown run kind {m.kind!r}") from exc
    return "\n".join(lines) + "\n"


def _read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _report_bell(root):
    r = _read_json(root / "chsh.json")
    rates = _read_json(root / "bell_rates.json")
    viol = "yes" if r["violation"] else "no"
    lines = [f"S = {_pm(r['S'], r['sigma_S'])} (violation: {viol})"]
    lines += [f"  {k} = {_pm(v, None)}" for k, v in r["E_values"].items()]
    lines.append(f"  mean singles {rates['mean_singles_hz']:.1f} Hz, mean coincidences {rates['mean_coincidence_rate_hz']:.3g} Hz")
    return lines


def _report_hom(root):
    fit = _read_json(root / "hom_fit.json")
    if "skipped" in fit:
        return [f"HOM fit skipped: {fit['skipped']}"]
    return [
        f"HOM visibility (fit) = {_pm(fit['visibility_fit'], fit['sigmas'].get('visibility'))}",
        f"HOM visibility (conservative) = {_pm(fit['visibility_conservative'], None)}",
    ] + _fit_lines(fit, {"sinc_width": " s", "gauss_width": " s", "center": " s"})


def _report_car(root):
    data = read_columns(root / "car_sweep.csv")
    lines = []
    for i, (mu, car, sig) in enumerate(zip(data["mean_pairs_per_pulse"], data["car"], data["car_sigma"])):
        flag = "" if math.isfinite(car) else " (no accidentals: CAR undefined)"
        car_text = _pm(float(car), float(sig)) if math.isfinite(car) else "undefined"
        lines.append(f"CAR[mu={mu:.4g}] = {car_text}{flag}")
    return lines + _fit_lines(_read_json(root / "car_fit.json"))


def _report_hbt(root):
    out = []
    for r in _read_json(root / "hbt.json"):
        flag = f" [{r['flag']}]" if r.get("flag") else ""
        out.append(f"g2(0) = {_pm(r['g2'], r['sigma_g2'])}, M = {_pm(r['modes'], r.get('sigma_modes'))}{flag}")
    return out


def _report_gain(root):
    fit = _read_json(root / "gain_fit.json")
    lines = _fit_lines(fit, {"alpha": " mW", "gamma": " mW^-1/2"})
    if "params" in fit:
        a, g = fit["params"]["alpha"], fit["params"]["gamma"]
        lines.append(f"  low-power efficiency (alpha*gamma^2) = {a * g * g:.4g}")
    return ["gain fit P = alpha*sinh^2(gamma*sqrt(P_pump)):"] + lines


_REPORTERS = {
    PlanKind.BELL: _report_bell,
    PlanKind.HOM: _report_hom,
    PlanKind.CAR_SWEEP: _report_car,
    PlanKind.HBT: _report_hbt,
    PlanKind.GAIN_SWEEP: _report_gain,
}
