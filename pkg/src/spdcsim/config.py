"""JSON experiment configuration.

A config document has four sections::

    {
      "source":    {"mean_pairs_per_pulse": 0.01, "mode_count": 1.8,
                    "polarization": "type2", "state_visibility": 1.0},
      "channels":  {"rep_rate_hz": 8e7, "loss_db": [14, 9], "window_ps": 2560},
      "detectors": {"efficiency": [0.02, 0.01], "dark_rate_hz": [600, 550],
                    "jitter_ps": 100, "dead_time_ps": 0, "resolution_ps": 1},
      "plan":      {"kind": "CarSweep", "pulses_per_point": 100000000, "seed": 7,
                    "sweep": {"parameter": "mean_pairs_per_pulse",
                              "values": [0.001, 0.01]}}
    }

Every physical quantity carries its unit in the key. ``channels`` takes
either ``loss_db`` (positive numbers) or a linear ``transmission``; the
detector efficiency multiplies in. ``mode_count`` may be the string
``"inf"`` for Poissonian pairs. Unknown keys are errors.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .montecarlo import ExperimentConfig, HomGeometry
from .physics import ChannelParams, GainParams, PairSourceModel, PolarizationType

__all__ = [
    "ConfigError",
    "PlanKind",
    "ExperimentPlan",
    "Setup",
    "canonical_json",
    "config_hash",
    "load_config",
    "parse_config",
    "SWEEP_PARAMETERS",
    "hom_geometry",
    "gain_params",
]


class ConfigError(ValueError):
    pass


class PlanKind(str, enum.Enum):
    GAIN_SWEEP = "GainSweep"
    CAR_SWEEP = "CarSweep"
    HOM = "Hom"
    BELL = "Bell"
    HBT = "Hbt"


# Parameter each kind sweeps over; None means the kind takes no sweep.
SWEEP_PARAMETERS = {
    PlanKind.GAIN_SWEEP: "pump_power_mw",
    PlanKind.CAR_SWEEP: "mean_pairs_per_pulse",
    PlanKind.HOM: "delay_ps",
    PlanKind.BELL: None,
    PlanKind.HBT: "mode_count",
}
_SWEEP_REQUIRED = {PlanKind.GAIN_SWEEP, PlanKind.CAR_SWEEP, PlanKind.HOM}


@dataclass(frozen=True)
class ExperimentPlan:
    kind: PlanKind
    pulses_per_point: int
    sweep_parameter: str | None = None
    sweep_values: tuple[float, ...] = ()
    output_dir: str = "run"
    window_ps: int | None = None
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.pulses_per_point <= 0:
            raise ConfigError("pulses_per_point must be > 0")
        expected = SWEEP_PARAMETERS[self.kind]
        if self.sweep_values and self.sweep_parameter != expected:
            raise ConfigError(f"{self.kind.value} sweeps over {expected!r}, not {self.sweep_parameter!r}")
        if self.kind in _SWEEP_REQUIRED and not self.sweep_values:
            raise ConfigError(f"{self.kind.value} needs a nonempty sweep over {expected!r}")

    @property
    def points(self) -> int:
        return max(1, len(self.sweep_values))


@dataclass(frozen=True)
class Setup:
    """Parsed config: the base simulation config plus the plan."""

    base: ExperimentConfig
    plan: ExperimentPlan
    document: dict

    @property
    def config_hash(self) -> str:
        return config_hash(self.document)


def canonical_json(doc) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=True, allow_nan=False)


def config_hash(doc) -> str:
    """sha256 of the canonical serialization; independent of key order and whitespace."""
    return hashlib.sha256(canonical_json(doc).encode()).hexdigest()


def load_config(path, *, seed: int | None = None, pulses: int | None = None, out=None) -> Setup:
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return parse_config(doc, seed=seed, pulses=pulses, out=out)


def _section(doc, name, allowed, required=()):
    sec = doc.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"section {name!r} must be an object")
    extra = set(sec) - set(allowed)
    if extra:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(extra)}")
    missing = [k for k in required if k not in sec]
    if missing:
        raise ConfigError(f"missing keys in {name!r}: {missing}")
    return sec


def _pair(sec, key, default=None):
    v = sec.get(key, default)
    if isinstance(v, (int, float)):
        return (float(v), float(v))
    if not (isinstance(v, list) and len(v) == 2 and all(isinstance(x, (int, float)) for x in v)):
        raise ConfigError(f"{key!r} must be a number or a list of two numbers")
    return (float(v[0]), float(v[1]))


def _number(sec, key, default):
    v = sec.get(key, default)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{key!r} must be a number, got {v!r}")
    return v


def _modes(v):
    if v in ("inf", None):
        return math.inf
    if isinstance(v, str) or not isinstance(v, (int, float)):
        raise ConfigError(f"mode_count must be a number or 'inf', got {v!r}")
    return float(v)


_PLAN_KEYS = {
    "kind",
    "pulses_per_point",
    "seed",
    "sweep",
    "output_dir",
    "window_ps",
    "block_pulses",
    "angles_rad",
    "indistinguishability",
    "sinc_width_ps",
    "gauss_width_ps",
    "center_ps",
    "alpha_mw",
    "gamma_per_sqrt_mw",
    "wavelength_nm",
}


def parse_config(doc, *, seed: int | None = None, pulses: int | None = None, out=None) -> Setup:
    """Validate a config document and build the simulation inputs.

    ``seed``, ``pulses`` and ``out`` override the plan values and are
    written back into the document, so the config hash covers them.
    """
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    extra = set(doc) - {"source", "channels", "detectors", "plan"}
    if extra:
        raise ConfigError(f"unknown sections: {sorted(extra)}")
    doc = json.loads(json.dumps(doc))
    plan_doc = doc.setdefault("plan", {})
    if seed is not None:
        plan_doc["seed"] = int(seed)
    if pulses is not None:
        plan_doc["pulses_per_point"] = int(pulses)
    if out is not None:
        plan_doc["output_dir"] = str(out)

    src = _section(doc, "source", {"mean_pairs_per_pulse", "mode_count", "polarization", "state_visibility"}, ["mean_pairs_per_pulse"])
    chan = _section(doc, "channels", {"rep_rate_hz", "loss_db", "transmission", "window_ps"})
    det = _section(doc, "detectors", {"efficiency", "dark_rate_hz", "jitter_ps", "dead_time_ps", "resolution_ps"})
    plan = _section(doc, "plan", _PLAN_KEYS, ["kind", "pulses_per_point", "seed"])

    try:
        source = PairSourceModel(
            mean_pairs_per_pulse=float(_number(src, "mean_pairs_per_pulse", 0.0)),
            mode_count=_modes(src.get("mode_count", 1.0)),
            polarization_type=PolarizationType(src.get("polarization", "type2")),
            state_visibility=float(_number(src, "state_visibility", 1.0)),
        )
        if "loss_db" in chan and "transmission" in chan:
            raise ConfigError("give either 'loss_db' or 'transmission', not both")
        if "transmission" in chan:
            trans = _pair(chan, "transmission")
        else:
            loss = _pair(chan, "loss_db", 0.0)
            trans = tuple(10 ** (-l / 10) for l in loss)
        eff = _pair(det, "efficiency", 1.0)
        channels = ChannelParams(
            transmission=(trans[0] * eff[0], trans[1] * eff[1]),
            dark_rate=_pair(det, "dark_rate_hz", 0.0),
            rep_rate=float(_number(chan, "rep_rate_hz", 80e6)),
            coincidence_window=float(_number(chan, "window_ps", 2560)) * 1e-12,
        )
        kind = PlanKind(plan["kind"])
        window = plan.get("window_ps")
        sweep = plan.get("sweep") or {}
        if set(sweep) - {"parameter", "values"}:
            raise ConfigError("sweep takes only 'parameter' and 'values'")
        values = tuple(float(_modes(v)) if sweep.get("parameter") == "mode_count" else float(v) for v in sweep.get("values", []))
        options = {k: plan[k] for k in _PLAN_KEYS - {"kind", "pulses_per_point", "seed", "sweep", "output_dir", "window_ps", "block_pulses"} if k in plan}
        _check_options(kind, options)
        ep = ExperimentPlan(
            kind=kind,
            pulses_per_point=int(_number(plan, "pulses_per_point", 0)),
            sweep_parameter=sweep.get("parameter"),
            sweep_values=values,
            output_dir=str(plan.get("output_dir", "run")),
            window_ps=None if window is None else int(window),
            options=options,
        )
        base = ExperimentConfig(
            source=source,
            channels=channels,
            pulse_count=ep.pulses_per_point,
            seed=int(_number(plan, "seed", 0)),
            detector_jitter_sigma=float(_number(det, "jitter_ps", 100)) * 1e-12,
            detector_dead_time=float(_number(det, "dead_time_ps", 0)) * 1e-12,
            timeline_resolution=int(_number(det, "resolution_ps", 1)),
            block_pulses=int(_number(plan, "block_pulses", 1 << 26)),
        )
        if kind is PlanKind.HOM:
            hom_geometry(ep)
        if kind is PlanKind.GAIN_SWEEP:
            gain_params(ep, 1.0)
    except ConfigError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc
    return Setup(base, ep, doc)


_KIND_OPTIONS = {
    PlanKind.BELL: {"angles_rad"},
    PlanKind.HOM: {"indistinguishability", "sinc_width_ps", "gauss_width_ps", "center_ps"},
    PlanKind.GAIN_SWEEP: {"alpha_mw", "gamma_per_sqrt_mw", "wavelength_nm"},
}


def _check_options(kind, options):
    bad = set(options) - _KIND_OPTIONS.get(kind, set())
    if bad:
        raise ConfigError(f"plan keys {sorted(bad)} do not apply to {kind.value}")
    if kind is PlanKind.BELL and "angles_rad" in options:
        a = options["angles_rad"]
        if a != "optimal" and not (isinstance(a, list) and len(a) == 4):
            raise ConfigError("angles_rad must be 'optimal' or [a, a', b, b']")
    if kind is PlanKind.GAIN_SWEEP:
        for k in ("alpha_mw", "gamma_per_sqrt_mw"):
            if k not in options:
                raise ConfigError(f"GainSweep needs {k!r}")


def hom_geometry(plan: ExperimentPlan) -> HomGeometry:
    o = plan.options
    return HomGeometry(
        delay=0.0,
        indistinguishability=float(o.get("indistinguishability", 1.0)),
        sinc_width=float(o.get("sinc_width_ps", 0.4)) * 1e-12,
        gauss_width=float(o.get("gauss_width_ps", 0.6)) * 1e-12,
        center=float(o.get("center_ps", 0.0)) * 1e-12,
    )


def gain_params(plan: ExperimentPlan, pump_power_mw: float) -> GainParams:
    o = plan.options
    return GainParams(float(o["alpha_mw"]), float(o["gamma_per_sqrt_mw"]), float(pump_power_mw))
