"""Acceptance criteria, each at its stated tolerance.

Every test records one ``PASS``/``FAIL criterion N...`` line, printed in
the terminal summary. Checks that are known to fail (inconsistent
targets, or a precision below the estimator's information bound) are
implemented as stated and left failing.
"""

import dataclasses
import json
import math

import numpy as np
import pytest
from scipy.optimize import brentq

from spdcsim.cli import main
from spdcsim.estimators import (
    chsh_S,
    expected_bell_counts,
    fit_car_curve,
    fit_spdc_power,
    optimal_chsh_angles,
)
from spdcsim.experiments import point_config, simulate_bell, simulate_car_point, simulate_hbt, simulate_hom
from spdcsim.montecarlo import BellGeometry, CoincidenceGeometry, ExperimentConfig, HbtGeometry, HomGeometry, simulate
from spdcsim.physics import ChannelParams, GainParams, PairSourceModel, car_model, spdc_efficiency_lowpower
from spdcsim.timetags import coincidence_histogram, window_counts

PI = math.pi
REP = 80e6
WINDOW = 2.56e-9
# -14/-9 dB fiber losses times 2%/1% detector efficiency
LAB_ETA = (10 ** -1.4 * 0.02, 10 ** -0.9 * 0.01)
LAB_DARK = (600.0, 550.0)


@pytest.fixture
def verdict(record_property):
    def record(tag, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {tag}: {detail}"
        print(line)
        record_property("acceptance", line)
        return ok

    return record


def mean_singles(mu, modes, etas, darks):
    # probability of at least one detection per pulse under NB(mu, M) thinned by eta
    p = [1 - (1 + mu * e / modes) ** (-modes) for e in etas]
    return float(np.mean([REP * pk + d for pk, d in zip(p, darks)]))


def tune_mu(target_hz, modes, etas, darks):
    return brentq(lambda mu: mean_singles(mu, modes, etas, darks) - target_hz, 1e-9, 1.0, xtol=1e-12)


def angle_tuple(v):
    o = optimal_chsh_angles(v)
    return o.theta_a, o.theta_a_prime, o.theta_b, o.theta_b_prime


# --- 1 ----------------------------------------------------------------------


@pytest.mark.parametrize(
    "angles",
    [(0.0, PI / 4, PI / 8, 3 * PI / 8), None],
    ids=["fixed-quarter-octave-set", "optimizer-set"],
)
def test_chsh_ideal(verdict, angles):
    angles = angles or angle_tuple(1.0)
    S = chsh_S(expected_bell_counts(*angles, 1.0, 1e6)).S
    err = abs(abs(S) - 2 * math.sqrt(2))
    assert verdict("1", err <= 1e-9, f"|S| = {abs(S):.15f}, |S| - 2sqrt2 = {err:.1e} (tol 1e-9)")


# --- 2 ----------------------------------------------------------------------

BELL_V = 0.778
BELL_MODES = 1.8
BELL_PULSES = 6_100_000_000


@pytest.fixture(scope="module")
def lab_bell_run():
    # Polarization analyzers pass half of the light in each arm.
    etas_analyzed = tuple(e / 2 for e in LAB_ETA)
    mu = tune_mu(3107.0, BELL_MODES, etas_analyzed, LAB_DARK)
    cfg = ExperimentConfig(
        PairSourceModel(mu, BELL_MODES, state_visibility=BELL_V),
        ChannelParams(LAB_ETA, LAB_DARK, REP, 512e-12),
        BELL_PULSES,
        20260101,
        block_pulses=1 << 28,
    )
    run = simulate_bell(cfg, *angle_tuple(BELL_V), window_ps=512)
    return mu, run, chsh_S(run.counts)


def test_chsh_lab_regime(verdict, lab_bell_run):
    mu, run, r = lab_bell_run
    in_band = 2.20 - 3 * 0.09 <= r.S <= 2.20 + 3 * 0.09
    sigma_ok = abs(r.sigma_S - 0.09) <= 0.3 * 0.09
    ok = in_band and sigma_ok
    assert verdict(
        "2a",
        ok,
        f"S = {r.S:.3f} +- {r.sigma_S:.3f} (band [1.93, 2.47], sigma in [0.063, 0.117]); "
        f"mu = {mu:.4g}, mean singles {run.singles.mean():.0f} Hz",
    )


def test_chsh_lab_coincidence_rate(verdict, lab_bell_run):
    _, run, _ = lab_bell_run
    rate = float(run.coincidence_rate.mean())
    assert verdict("2b", abs(rate - 0.20) <= 0.05, f"mean zero-delay coincidence rate {rate:.3f} Hz (target 0.20 +- 0.05)")


# --- 3 ----------------------------------------------------------------------


def test_sigma_calibration(verdict):
    cfg = ExperimentConfig(
        PairSourceModel(0.05, 1.8, state_visibility=0.778), ChannelParams((0.1, 0.1), (0.0, 0.0)), 10**6, 3
    )
    angles = angle_tuple(0.778)
    results = [chsh_S(simulate_bell(point_config(cfg, k), *angles).counts) for k in range(200)]
    S = np.array([r.S for r in results])
    sig = np.array([r.sigma_S for r in results])
    ratio = S.std(ddof=1) / sig.mean()
    assert verdict("3", 0.85 <= ratio <= 1.15, f"std(S)/mean(sigma_S) = {ratio:.3f} over 200 runs (range [0.85, 1.15])")


# --- 4 ----------------------------------------------------------------------

CAR_MODES = 1.8


def car_config(mu, pulses, seed):
    return ExperimentConfig(
        PairSourceModel(mu, CAR_MODES),
        ChannelParams(LAB_ETA, LAB_DARK, REP, WINDOW),
        pulses,
        seed,
        block_pulses=1 << 28,
    )


def test_car_lab_point(verdict):
    mu = tune_mu(860.0, CAR_MODES, LAB_ETA, LAB_DARK)
    # two hours of pulses
    res = simulate_car_point(car_config(mu, int(2 * 3600 * REP), 41))
    car = res.car
    assert verdict(
        "4a",
        80 <= car.car <= 330,
        f"CAR = {car.car:.1f} +- {car.stat_uncertainty:.1f} (band [80, 330]); singles {res.singles[0]:.0f}/{res.singles[1]:.0f} Hz",
    )


def test_car_sweep_shape(verdict):
    mus = np.array([3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1])
    ests = [simulate_car_point(car_config(mu, 40_000_000_000, 100 + i)).car for i, mu in enumerate(mus)]
    cars = np.array([e.car for e in ests])
    sig = np.array([e.stat_uncertainty for e in ests])
    eta1, eta2 = LAB_ETA
    d1, d2 = (r * WINDOW for r in LAB_DARK)
    ratio = 12500 / 2560
    model = car_model(mus, eta1, eta2, d1, d2, CAR_MODES, period_over_window=ratio)
    peak = int(np.argmax(cars))
    interior = 0 < peak < mus.size - 1
    # 1/mu tail: five times the model's peak or more, where dark terms are < 1/25 of the pair term.
    mu_peak = math.sqrt(d1 * d2 * ratio / (eta1 * eta2))
    tail = mus >= 5 * mu_peak
    top = cars[tail] * mus[tail]
    flat = tail.sum() >= 2 and top.max() / top.min() <= 1.2
    pulls = (cars - model) / sig
    follows = np.all(np.abs(pulls) <= 3)
    text = ", ".join(f"{c:.0f}" for c in cars)
    assert verdict(
        "4b",
        interior and flat and follows,
        f"CAR over mu sweep [{text}], peak index {peak}, CAR*mu spread {top.max() / top.min():.3f} for mu >= {5 * mu_peak:.3g} (<= 1.2), "
        f"max |pull| vs model {np.abs(pulls).max():.2f} (<= 3)",
    )


def test_car_coupling_recovery(verdict):
    mu = np.geomspace(1e-4, 0.2, 12)
    eta1, eta2 = LAB_ETA
    d1, d2 = (r * WINDOW for r in LAB_DARK)
    truth = car_model(mu, eta1, 3.1 * eta2, d1, d2)
    sigma = 0.03 * truth
    noisy = truth + sigma * np.random.default_rng(31).standard_normal(mu.size)
    fit = fit_car_curve(mu, noisy, eta1, eta2, d1, d2, 1 / sigma)
    r = fit["coupling_ratio"]
    assert verdict("4c", abs(r - 3.1) <= 0.1, f"coupling ratio {r:.3f} +- {fit.sigmas['coupling_ratio']:.3f} from 3%-noise synthetic CAR (target 3.1 +- 0.1)")


# --- 5 ----------------------------------------------------------------------

HOM_DELAYS = np.round(np.linspace(-2, 2, 25), 4) * 1e-12
HOM_GEOMETRY = HomGeometry(0.0, 0.881, 0.4e-12, 0.6e-12, 0.05e-12)


def hom_config(pulses, seed):
    return ExperimentConfig(PairSourceModel(1e-3, 1.8), ChannelParams((0.5, 0.5), (0.0, 0.0)), pulses, seed, block_pulses=1 << 28)


def test_hom_visibility(verdict):
    scan = simulate_hom(hom_config(1_400_000_000, 5), HOM_DELAYS, HOM_GEOMETRY)
    least = int(scan.coincidences.min())
    ok = least >= 10_000 and abs(scan.visibility_fit - 0.881) <= 0.02
    assert verdict(
        "5a", ok, f"V_fit = {scan.visibility_fit:.4f} +- {scan.fit.sigmas['visibility']:.4f} (0.881 +- 0.02), min counts/point {least}"
    )


def test_hom_conservative_below_fit(verdict):
    scans = [simulate_hom(hom_config(1_400_000_000, 50 + k), HOM_DELAYS, HOM_GEOMETRY) for k in range(5)]
    gaps = [s.visibility_fit - s.visibility_conservative for s in scans]
    assert verdict("5b", min(gaps) >= 0, f"V_fit - V_conservative over 5 noisy runs: min {min(gaps):.4f} (>= 0)")


# --- 6 ----------------------------------------------------------------------


@pytest.mark.parametrize("modes, g2, tol_m", [(1.0, 2.0, 0.1), (1.8, 1.556, 0.15), (7.0, 1.143, 2.0)])
def test_hbt_modes(verdict, modes, g2, tol_m):
    cfg = ExperimentConfig(
        PairSourceModel(0.1, modes), ChannelParams((0.25, 0.25), (0.0, 0.0)), 10**8, 3 + int(10 * modes), geometry=HbtGeometry()
    )
    est = simulate_hbt(cfg).estimate
    ok = abs(est.g2 - g2) <= 0.05 and abs(est.modes - modes) <= tol_m
    assert verdict("6", ok, f"M = {modes}: g2 = {est.g2:.4f} (target {g2} +- 0.05), M = {est.modes:.3f} (+- {tol_m})")


# --- 7 ----------------------------------------------------------------------

GAIN_GAMMA = 0.0673
# fixes the low-power efficiency at 10 mW to 3.0e-11
GAIN_ALPHA = 3.0e-11 * 10 / math.sinh(GAIN_GAMMA * math.sqrt(10)) ** 2
GAIN_PUMP = np.geomspace(10, 1000, 20)


def gain_data(alpha=GAIN_ALPHA, gamma=GAIN_GAMMA):
    return alpha * np.sinh(gamma * np.sqrt(GAIN_PUMP)) ** 2


def test_gain_noiseless(verdict):
    fit = fit_spdc_power(GAIN_PUMP, gain_data())
    ea = abs(fit["alpha"] / GAIN_ALPHA - 1)
    eg = abs(fit["gamma"] / GAIN_GAMMA - 1)
    assert verdict("7a", max(ea, eg) <= 1e-6, f"noiseless relative errors alpha {ea:.1e}, gamma {eg:.1e} (tol 1e-6)")


@pytest.fixture(scope="module")
def gain_trials():
    g = np.random.default_rng(7)
    out = []
    for _ in range(100):
        y = gain_data() * (1 + 0.05 * g.standard_normal(GAIN_PUMP.size))
        fit = fit_spdc_power(GAIN_PUMP, y)
        out.append((fit["alpha"] / GAIN_ALPHA - 1, fit["gamma"] / GAIN_GAMMA - 1))
    return np.array(out)


@pytest.mark.parametrize("name, col", [("alpha", 0), ("gamma", 1)])
def test_gain_noisy(verdict, gain_trials, name, col):
    spread = 3 * gain_trials[:, col].std(ddof=1)
    bias = gain_trials[:, col].mean()
    assert verdict("7b", spread <= 0.05, f"{name}: 3*std of relative error {spread:.4f} over 100 trials at 5% noise (<= 0.05), mean {bias:+.4f}")


def test_gain_low_power_anchor(verdict):
    fit = fit_spdc_power(GAIN_PUMP, gain_data())
    eff = spdc_efficiency_lowpower(GainParams(fit["alpha"], fit["gamma"], 10.0))
    assert verdict("7c", abs(eff - 3.0e-11) <= 0.2e-11, f"low-power efficiency at 10 mW {eff:.4g} (3.0e-11 +- 0.2e-11)")


# --- 8 ----------------------------------------------------------------------


def brute_force(t1, t2, bin_width, range_ps):
    d = (t2[None, :].astype(np.int64) - t1[:, None].astype(np.int64)).ravel()
    d = d[(d >= -range_ps) & (d < range_ps)]
    return np.bincount((d + range_ps) // bin_width, minlength=2 * range_ps // bin_width)


def test_histogram_brute_force(verdict):
    g = np.random.default_rng(8)
    bad = 0
    for _ in range(200):
        n1, n2 = g.integers(0, 80, 2)
        span = int(g.integers(1, 10**6))
        bw = int(g.integers(1, 2000))
        rng_ps = bw * int(g.integers(1, 50))
        t1 = np.sort(g.integers(0, span, n1))
        t2 = np.sort(g.integers(0, span, n2))
        h = coincidence_histogram(t1, t2, bw, rng_ps)
        bad += not np.array_equal(h.counts, brute_force(t1, t2, bw, rng_ps))
    assert verdict("8a", bad == 0, f"{200 - bad}/200 random instances equal to all-pairs brute force")


def test_accidental_peaks(verdict):
    cfg = ExperimentConfig(PairSourceModel(0.1, 1.8), ChannelParams((0.1, 0.1), (600.0, 550.0)), 10**8, 88)
    s1, s2 = simulate(cfg)
    h = coincidence_histogram(s1, s2, 256, 256 * 250)
    peaks = np.array([window_counts(h, m * 12500, 2560) for m in (-4, -3, -2, -1, 1, 2, 3, 4)])
    between = np.array([window_counts(h, (m + 0.5) * 12500, 2560) for m in (-4, -3, -2, -1, 1, 2, 3)])
    mean = peaks.mean()
    worst = np.max(np.abs(peaks - mean)) / math.sqrt(mean)
    ok = worst <= 3 and between.max() < 0.05 * mean
    assert verdict("8b", ok, f"side peaks at m*12.5 ns: {peaks.tolist()}, max deviation {worst:.2f} sigma (<= 3); between peaks max {between.max()}")


# --- 9 ----------------------------------------------------------------------

DETERMINISM_CONFIG = {
    "source": {"mean_pairs_per_pulse": 0.02, "mode_count": 1.8},
    "channels": {"rep_rate_hz": 8e7, "transmission": [0.05, 0.05], "window_ps": 2560},
    "detectors": {"dark_rate_hz": [5e3, 5e3], "dead_time_ps": 20000},
    "plan": {"kind": "CarSweep", "pulses_per_point": 3_000_000, "seed": 9, "block_pulses": 1 << 20,
             "sweep": {"parameter": "mean_pairs_per_pulse", "values": [0.003, 0.03, 0.3]}},
}


def test_determinism(verdict, tmp_path, monkeypatch):
    cfg = tmp_path / "config.json"
    cfg.write_text(json.dumps(DETERMINISM_CONFIG))
    trees = []
    for name, workers in (("first", "1"), ("second", "1"), ("parallel", "8")):
        (tmp_path / name).mkdir()
        monkeypatch.chdir(tmp_path / name)
        monkeypatch.setenv("SPDCSIM_WORKERS", workers)
        assert main(["simulate", str(cfg), "--out", "run", "--emit-tags"]) == 0
        root = tmp_path / name / "run"
        files = {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}
        manifest = json.loads(files.pop("manifest.json"))
        manifest.pop("wall_time")
        trees.append((files, manifest))
    same = trees[0] == trees[1] == trees[2]
    assert verdict("9", same, f"{len(trees[0][0])} output files byte-identical across two runs and 1 vs 8 workers (manifest wall_time excluded)")
