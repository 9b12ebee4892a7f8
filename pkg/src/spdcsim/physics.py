"""Closed-form models for pulsed photon-pair sources.

Everything here is a pure function of its arguments. Sampling lives in
:mod:`spdcsim.montecarlo`.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

__all__ = [
    "GainParams",
    "PolarizationType",
    "PairSourceModel",
    "ChannelParams",
    "HomProfileParams",
    "spdc_power",
    "spdc_efficiency_lowpower",
    "pair_count_distribution",
    "singlet_outcome_probs",
    "product_outcome_probs",
    "car_model",
    "g2_from_modes",
    "modes_from_g2",
    "mode_count_estimate",
    "sinc",
    "hom_profile",
    "SINC_MIN",
]

# Most negative value of sin(x)/x, reached at x ~ 4.4934.
SINC_MIN = -0.21723362821122166


@dataclass(frozen=True)
class GainParams:
    """Parameters of the parametric gain law.

    ``alpha`` carries the power units of the output, ``gamma`` is in
    1/sqrt(mW) and ``pump_power`` in mW.
    """

    alpha: float
    gamma: float
    pump_power: float

    def __post_init__(self):
        if self.alpha < 0 or self.gamma < 0 or self.pump_power < 0:
            raise ValueError(f"gain parameters must be nonnegative: {self}")


class PolarizationType(str, enum.Enum):
    TYPE0_CORRELATED = "type0"
    TYPE2_SINGLET = "type2"


@dataclass(frozen=True)
class PairSourceModel:
    """Photon-pair source.

    ``mode_count`` may be ``math.inf`` for Poissonian pair statistics.
    ``state_visibility`` is the singlet weight of a Werner state and only
    matters for polarization measurements.
    """

    mean_pairs_per_pulse: float
    mode_count: float = 1.0
    polarization_type: PolarizationType = PolarizationType.TYPE2_SINGLET
    state_visibility: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "polarization_type", PolarizationType(self.polarization_type))
        if not self.mean_pairs_per_pulse >= 0:
            raise ValueError(f"mean_pairs_per_pulse must be >= 0, got {self.mean_pairs_per_pulse}")
        if not self.mode_count >= 1:
            raise ValueError(f"mode_count must be >= 1, got {self.mode_count}")
        if not 0 <= self.state_visibility <= 1:
            raise ValueError(f"state_visibility must lie in [0, 1], got {self.state_visibility}")


@dataclass(frozen=True)
class ChannelParams:
    """Two detection channels sharing one pulsed pump.

    ``transmission`` is the total efficiency of each channel, detector
    included. ``dark_rate`` is in Hz, ``rep_rate`` in Hz and
    ``coincidence_window`` in seconds.
    """

    transmission: tuple[float, float]
    dark_rate: tuple[float, float] = (0.0, 0.0)
    rep_rate: float = 80e6
    coincidence_window: float = 2.56e-9

    def __post_init__(self):
        object.__setattr__(self, "transmission", tuple(float(t) for t in self.transmission))
        object.__setattr__(self, "dark_rate", tuple(float(d) for d in self.dark_rate))
        if len(self.transmission) != 2 or len(self.dark_rate) != 2:
            raise ValueError("exactly two channels are supported")
        if any(not 0 <= t <= 1 for t in self.transmission):
            raise ValueError(f"transmission must lie in [0, 1], got {self.transmission}")
        if any(not d >= 0 for d in self.dark_rate):
            raise ValueError(f"dark_rate must be >= 0, got {self.dark_rate}")
        if not self.rep_rate > 0:
            raise ValueError(f"rep_rate must be > 0, got {self.rep_rate}")
        if not 0 < self.coincidence_window < 1 / self.rep_rate:
            raise ValueError("coincidence_window must lie in (0, 1/rep_rate)")

    @classmethod
    def from_budget(cls, budgets, **kwargs) -> "ChannelParams":
        """Build channels from itemized per-channel transmission factors."""
        return cls(transmission=tuple(math.prod(b) for b in budgets), **kwargs)

    @property
    def dark_probability(self) -> tuple[float, float]:
        """Expected dark counts per coincidence window, per channel."""
        return tuple(d * self.coincidence_window for d in self.dark_rate)


@dataclass(frozen=True)
class HomProfileParams:
    baseline: float
    visibility: float
    sinc_width: float
    gauss_width: float
    center: float = 0.0

    def __post_init__(self):
        if not self.baseline > 0:
            raise ValueError("baseline must be > 0")
        if not 0 <= self.visibility <= 1:
            raise ValueError("visibility must lie in [0, 1]")
        if not (self.sinc_width > 0 and self.gauss_width > 0):
            raise ValueError("profile widths must be > 0")


def spdc_power(g: GainParams) -> float:
    """Down-converted power ``alpha * sinh(gamma*sqrt(P))**2``."""
    return g.alpha * math.sinh(g.gamma * math.sqrt(g.pump_power)) ** 2


def spdc_efficiency_lowpower(g: GainParams) -> float:
    """Second-order expansion of the conversion efficiency in pump power."""
    return g.alpha * g.gamma**2 + g.alpha * g.gamma**4 * g.pump_power / 3


def pair_count_distribution(src: PairSourceModel):
    """Distribution of the number of pairs per pulse.

    Each of ``M`` modes is thermal, so the total is negative binomial with
    shape ``M`` and mean ``mu``; the variance is ``mu * (1 + mu / M)``.
    ``M = inf`` gives the Poisson limit. Returns a frozen scipy
    distribution.
    """
    mu, m = src.mean_pairs_per_pulse, src.mode_count
    if mu < 0 or m < 1:
        raise ValueError("need mu >= 0 and M >= 1")
    if math.isinf(m):
        return stats.poisson(mu)
    return stats.nbinom(m, m / (m + mu))


def singlet_outcome_probs(theta_a, theta_b, visibility=1.0):
    """Joint pass/block probabilities for two linear analyzers on a Werner state.

    Returns ``(P++, P+-, P-+, P--)`` where ``+`` means the photon is
    transmitted by the analyzer set to its angle. Broadcasts over array
    arguments.
    """
    if np.any(np.asarray(visibility) < 0) or np.any(np.asarray(visibility) > 1):
        raise ValueError("visibility must lie in [0, 1]")
    c = np.asarray(visibility) * np.cos(2 * (np.asarray(theta_a) - np.asarray(theta_b)))
    same = 0.25 * (1 - c)
    diff = 0.25 * (1 + c)
    return same, diff, diff, same


def product_outcome_probs(theta_a, theta_b):
    """Outcome probabilities for two horizontally polarized photons (type-0 pairs)."""
    pa = np.cos(np.asarray(theta_a)) ** 2
    pb = np.cos(np.asarray(theta_b)) ** 2
    return pa * pb, pa * (1 - pb), (1 - pa) * pb, (1 - pa) * (1 - pb)


def car_model(mu, eta1, eta2, d1, d2, mode_count=math.inf, *, period_over_window=1.0):
    """Coincidence-to-accidental ratio of a pulsed pair source.

    ``d1`` and ``d2`` are dark-count probabilities per coincidence window.
    With the default infinite ``mode_count`` this is the usual Poissonian
    expression; a finite ``M`` adds the excess multi-pair term
    ``mu**2 * eta1 * eta2 / M`` to the true coincidences.

    The default treats dark counts as gated to the window. For detectors
    that run free, pass the ratio of the pulse period to the window: the
    dark-dark accidentals then grow by ``d1 * d2 * (period_over_window - 1)``.
    """
    args = np.broadcast_arrays(*map(np.asarray, (mu, eta1, eta2, d1, d2)))
    if any(np.any(a < 0) for a in args):
        raise ValueError("car_model arguments must be nonnegative")
    mu, eta1, eta2, d1, d2 = args
    if period_over_window < 1:
        raise ValueError("period_over_window must be >= 1")
    denom = (mu * eta1 + d1) * (mu * eta2 + d2) + d1 * d2 * (period_over_window - 1)
    if np.any(denom == 0):
        raise ValueError("car_model denominator vanishes; need mu*eta + d > 0 in both channels")
    true = mu * eta1 * eta2
    if not math.isinf(mode_count):
        true = true + mu**2 * eta1 * eta2 / mode_count
    out = true / denom + 1
    return float(out) if out.ndim == 0 else out


def g2_from_modes(m: float) -> float:
    if not m >= 1:
        raise ValueError(f"mode count must be >= 1, got {m}")
    return 1.0 + 1.0 / m


def modes_from_g2(g2: float) -> float:
    if not 1 < g2 <= 2:
        raise ValueError(f"g2 must lie in (1, 2] to map onto M >= 1, got {g2}")
    return 1.0 / (g2 - 1.0)


def mode_count_estimate(filter_bandwidth: float, pump_bandwidth: float) -> float:
    """Rough temporal mode number from the filter-to-pump bandwidth ratio, at least 1."""
    if not (filter_bandwidth > 0 and pump_bandwidth > 0):
        raise ValueError("bandwidths must be positive")
    return max(1.0, filter_bandwidth / pump_bandwidth)


def sinc(x):
    """Unnormalized sinc, ``sin(x)/x`` with ``sinc(0) = 1``."""
    return np.sinc(np.asarray(x) / np.pi)


def hom_profile(tau, p: HomProfileParams):
    """Coincidences versus delay: a Gaussian-weighted sinc dip below ``baseline``."""
    d = np.asarray(tau, dtype=float) - p.center
    shape = sinc(np.pi * d / p.sinc_width) * np.exp(-(d**2) / (2 * p.gauss_width**2))
    return p.baseline * (1 - p.visibility * shape)
