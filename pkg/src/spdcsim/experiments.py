"""Simulate-then-analyze chains for the standard measurements.

Each function takes a fully specified :class:`ExperimentConfig` whose
geometry is overwritten per measurement point. Point ``i`` of a scan runs
with seed ``derive_seed(config.seed, i)``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .estimators import BellCounts, FitReport, G2Estimate, fit_hom_dip, g2_zero_estimate, visibility_conservative
from .montecarlo import (
    BellGeometry,
    CoincidenceGeometry,
    ExperimentConfig,
    HbtGeometry,
    HomGeometry,
    TagStream,
    simulate,
)
from .rng import derive_seed
from .timetags import (
    CarEstimate,
    CoincidenceHistogram,
    car_from_histogram,
    coincidence_histogram,
    count_coincidences,
    rebin,
    singles_rates,
)

__all__ = [
    "FINE_BIN_PS",
    "REBIN",
    "BELL_WINDOW_PS",
    "CarAnalysis",
    "analyze_car",
    "simulate_car_point",
    "HomScan",
    "simulate_hom",
    "BellRun",
    "simulate_bell",
    "HbtRun",
    "simulate_hbt",
    "point_config",
]

FINE_BIN_PS = 256
REBIN = 10
BELL_WINDOW_PS = 512


def point_config(config: ExperimentConfig, index: int, **changes) -> ExperimentConfig:
    """Config of scan point ``index``: derived seed plus the given field changes."""
    return dataclasses.replace(config, seed=derive_seed(config.seed, index), **changes)


@dataclass
class CarAnalysis:
    singles: tuple[float, float]
    car: CarEstimate
    fine: CoincidenceHistogram
    coarse: CoincidenceHistogram


def analyze_car(
    s1: TagStream,
    s2: TagStream,
    duration: float,
    period_ps: int,
    *,
    bin_width: int = FINE_BIN_PS,
    rebin_factor: int = REBIN,
    n_side_peaks: int = 4,
) -> CarAnalysis:
    """Histogram with ``bin_width`` bins, CAR over a window of ``rebin_factor`` bins.

    Bins are laid out so that the rebinned histogram has a bin centered on
    zero delay; the CAR windows are summed on the fine histogram so that
    side peaks off the coarse grid are still captured whole.
    """
    window = bin_width * rebin_factor
    step = bin_width * rebin_factor // 2 if rebin_factor % 2 == 0 else bin_width * rebin_factor
    need = n_side_peaks * period_ps + window
    range_ps = int(math.ceil(need / step) * step)
    fine = coincidence_histogram(s1, s2, bin_width, range_ps, offset=-range_ps - window // 2)
    coarse = rebin(fine, rebin_factor)
    car = car_from_histogram(fine, period_ps, window, n_side_peaks)
    return CarAnalysis((singles_rates(s1, duration), singles_rates(s2, duration)), car, fine, coarse)


def simulate_car_point(config: ExperimentConfig, **kwargs) -> CarAnalysis:
    cfg = dataclasses.replace(config, geometry=CoincidenceGeometry())
    s1, s2 = simulate(cfg)
    return analyze_car(s1, s2, cfg.duration, cfg.period_ps, **kwargs)


@dataclass
class HomScan:
    delays: np.ndarray
    coincidences: np.ndarray
    fit: FitReport
    visibility_fit: float
    visibility_conservative: float


def simulate_hom(config: ExperimentConfig, delays, geometry: HomGeometry, window_ps: int = FINE_BIN_PS * REBIN) -> HomScan:
    """Delay scan of a HOM dip, fitted with the sinc-Gaussian profile."""
    delays = np.asarray(delays, dtype=float)
    counts = np.empty(delays.size, dtype=np.int64)
    for i, d in enumerate(delays):
        cfg = point_config(config, i, geometry=dataclasses.replace(geometry, delay=float(d)))
        s1, s2 = simulate(cfg)
        counts[i] = count_coincidences(s1, s2, -window_ps // 2, window_ps // 2)
    fit = fit_hom_dip(delays, counts)
    return HomScan(delays, counts, fit, fit.params["visibility"], visibility_conservative(counts, fit))


@dataclass
class BellRun:
    counts: BellCounts
    singles: np.ndarray
    coincidence_rate: np.ndarray
    duration: float


def simulate_bell(config: ExperimentConfig, theta_a, theta_a_prime, theta_b, theta_b_prime, window_ps: int = BELL_WINDOW_PS) -> BellRun:
    """Coincidences at the 16 CHSH settings, each measured for ``config.pulse_count`` pulses."""
    table = BellCounts(theta_a, theta_a_prime, theta_b, theta_b_prime, np.zeros((4, 4)))
    singles = np.zeros((4, 4, 2))
    for k, (i, j, ta, tb) in enumerate(table.settings()):
        cfg = point_config(config, k, geometry=BellGeometry(ta, tb))
        s1, s2 = simulate(cfg)
        table.counts[i, j] = count_coincidences(s1, s2, -window_ps // 2, window_ps // 2)
        singles[i, j] = singles_rates(s1, cfg.duration), singles_rates(s2, cfg.duration)
    duration = config.duration
    return BellRun(table, singles, table.counts / duration, duration)


@dataclass
class HbtRun:
    estimate: G2Estimate
    singles: tuple[int, int]
    coincidences: int
    pulses: int


def simulate_hbt(config: ExperimentConfig, window_ps: int = FINE_BIN_PS * REBIN) -> HbtRun:
    cfg = dataclasses.replace(config, geometry=HbtGeometry())
    s1, s2 = simulate(cfg)
    c = count_coincidences(s1, s2, -window_ps // 2, window_ps // 2)
    est = g2_zero_estimate(len(s1), len(s2), c, cfg.pulse_count)
    return HbtRun(est, (len(s1), len(s2)), c, cfg.pulse_count)
