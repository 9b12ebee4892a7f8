"""Pulse-resolved Monte Carlo of a pulsed pair source and two detectors.

Two engines produce statistically identical tag streams:

``dense``
    Walks every pulse: draws the pair number, the analyzer or beam-splitter
    outcome of every pair, the channel loss of every photon. Simple and
    slow; used as the reference.
``sparse``
    Draws only the pulses that produce at least one detection. A pair is
    *relevant* when it yields at least one detected photon, with
    probability ``q``. Thinning a negative binomial ``NB(mu, M)`` by ``q``
    gives ``NB(mu*q, M)``, so the number of relevant pairs per pulse is
    sampled directly and each relevant pair then draws its detection
    pattern from the conditional table built by :func:`detection_patterns`.
    The cost scales with the number of detections, not pulses.

Dark counts are a homogeneous Poisson process over the whole timeline in
both engines. The timeline is cut into fixed-size blocks, each simulated
from its own substream, so the output does not depend on the number of
worker threads.
"""

from __future__ import annotations

import enum
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy import stats

from .physics import (
    ChannelParams,
    PairSourceModel,
    PolarizationType,
    product_outcome_probs,
    singlet_outcome_probs,
    sinc,
)
from .rng import substream

__all__ = [
    "Origin",
    "TagStream",
    "CoincidenceGeometry",
    "HomGeometry",
    "BellGeometry",
    "HbtGeometry",
    "ExperimentConfig",
    "simulate",
    "sample_pairs",
    "thin_loss",
    "bell_outcome",
    "hom_coincidence_prob",
    "detector_response",
    "apply_dead_time",
    "detection_patterns",
    "WORKERS_ENV",
]

WORKERS_ENV = "SPDCSIM_WORKERS"
_INT64_MAX = np.iinfo(np.int64).max
_DENSE_CHUNK = 1 << 20


class Origin(enum.IntEnum):
    PHOTON = 0
    DARK = 1


@dataclass
class TagStream:
    """Sorted detection timestamps of one detector in integer picoseconds."""

    channel_id: int
    tags: np.ndarray
    origin: np.ndarray | None = None

    def __post_init__(self):
        tags = np.asarray(self.tags)
        if tags.size and (tags.min() < 0):
            raise ValueError("tags must be nonnegative")
        self.tags = tags.astype(np.uint64, copy=False).reshape(-1)
        if self.tags.size > 1 and np.any(self.tags[1:] < self.tags[:-1]):
            raise ValueError("tags must be nondecreasing")
        if self.origin is None:
            self.origin = np.zeros(self.tags.size, dtype=np.uint8)
        else:
            self.origin = np.asarray(self.origin, dtype=np.uint8).reshape(-1)
            if self.origin.size != self.tags.size:
                raise ValueError("origin must have one entry per tag")

    def __len__(self):
        return int(self.tags.size)

    def __eq__(self, other):
        if not isinstance(other, TagStream):
            return NotImplemented
        return self.channel_id == other.channel_id and np.array_equal(self.tags, other.tags)

    @property
    def dark_fraction(self) -> float:
        return float(np.mean(self.origin == Origin.DARK)) if len(self) else 0.0


@dataclass(frozen=True)
class CoincidenceGeometry:
    """Signal to detector 1, idler to detector 2."""


@dataclass(frozen=True)
class HomGeometry:
    """Signal and idler meet on a 50:50 splitter; detectors sit on its outputs.

    Widths and delays are in seconds.
    """

    delay: float
    indistinguishability: float = 1.0
    sinc_width: float = 0.4e-12
    gauss_width: float = 0.6e-12
    center: float = 0.0

    def __post_init__(self):
        if not 0 <= self.indistinguishability <= 1:
            raise ValueError("indistinguishability must lie in [0, 1]")
        if not (self.sinc_width > 0 and self.gauss_width > 0):
            raise ValueError("HOM widths must be > 0")


@dataclass(frozen=True)
class BellGeometry:
    """A linear analyzer, set to ``theta_a`` / ``theta_b`` radians, in front of each detector."""

    theta_a: float
    theta_b: float


@dataclass(frozen=True)
class HbtGeometry:
    """Only the signal arm, split 50:50 onto the two detectors."""


Geometry = Union[CoincidenceGeometry, HomGeometry, BellGeometry, HbtGeometry]


@dataclass(frozen=True)
class ExperimentConfig:
    source: PairSourceModel
    channels: ChannelParams
    pulse_count: int
    seed: int
    geometry: Geometry = field(default_factory=CoincidenceGeometry)
    detector_jitter_sigma: float = 100e-12
    detector_dead_time: float = 0.0
    timeline_resolution: int = 1
    block_pulses: int = 1 << 26

    def __post_init__(self):
        if int(self.pulse_count) != self.pulse_count or self.pulse_count <= 0:
            raise ValueError(f"pulse_count must be a positive integer, got {self.pulse_count}")
        object.__setattr__(self, "pulse_count", int(self.pulse_count))
        if not 0 <= int(self.seed) < 1 << 64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.detector_jitter_sigma < 0:
            raise ValueError("detector_jitter_sigma must be >= 0")
        if self.detector_dead_time < 0:
            raise ValueError("detector_dead_time must be >= 0")
        if int(self.timeline_resolution) != self.timeline_resolution or self.timeline_resolution < 1:
            raise ValueError("timeline_resolution must be an integer >= 1 ps")
        if self.block_pulses < 1:
            raise ValueError("block_pulses must be >= 1")
        if not isinstance(self.geometry, (CoincidenceGeometry, HomGeometry, BellGeometry, HbtGeometry)):
            raise TypeError(f"unknown geometry {self.geometry!r}")
        if self.pulse_count * self.period_ps + self.period_ps >= _INT64_MAX:
            raise ValueError("pulse_count overflows the 64-bit picosecond timeline")

    @property
    def period_ps(self) -> int:
        return int(round(1e12 / self.channels.rep_rate))

    @property
    def duration(self) -> float:
        """Simulated time in seconds."""
        return self.pulse_count * self.period_ps * 1e-12

    @property
    def emission_offset_ps(self) -> int:
        # Pulse k is emitted at k*period + offset, keeping jittered tags positive.
        return self.period_ps // 2

    def blocks(self):
        n = self.block_pulses
        return [(i, s, min(n, self.pulse_count - s)) for i, s in enumerate(range(0, self.pulse_count, n))]


# ---------------------------------------------------------------------------
# Primitives


def sample_pairs(src: PairSourceModel, rng: np.random.Generator, size=None):
    """Number of pairs created in a pulse (negative binomial, Poisson for ``M = inf``)."""
    mu, m = src.mean_pairs_per_pulse, src.mode_count
    if mu == 0:
        return np.zeros(size, dtype=np.int64) if size is not None else 0
    if math.isinf(m):
        return rng.poisson(mu, size)
    return rng.negative_binomial(m, m / (m + mu), size)


def thin_loss(present, transmission: float, rng: np.random.Generator):
    """Independent survival of every present photon with probability ``transmission``."""
    present = np.asarray(present, dtype=bool)
    if transmission >= 1:
        return present.copy()
    if transmission <= 0:
        return np.zeros_like(present)
    return present & (rng.random(present.shape) < transmission)


def bell_outcome(n_pairs: int, theta_a: float, theta_b: float, src: PairSourceModel, rng):
    """Analyzer outcomes for ``n_pairs`` pairs; returns boolean pass arrays for each arm."""
    probs = _outcome_probs(src, theta_a, theta_b)
    u = rng.random(n_pairs)
    edges = np.cumsum(probs)[:-1]
    k = np.searchsorted(edges, u, side="right")
    # k: 0 = ++, 1 = +-, 2 = -+, 3 = --
    return (k == 0) | (k == 1), (k == 0) | (k == 2)


def hom_coincidence_prob(delay, indistinguishability, sinc_width, gauss_width, center=0.0):
    """Probability that a pair exits a 50:50 splitter through different ports."""
    d = np.asarray(delay, dtype=float) - center
    overlap = sinc(np.pi * d / sinc_width) * np.exp(-(d**2) / (2 * gauss_width**2))
    out = 0.5 * (1 - indistinguishability * overlap)
    return float(out) if out.ndim == 0 else out


def detector_response(
    arrivals,
    dark_rate: float,
    span: tuple[int, int],
    jitter_sigma: float,
    dead_time: float,
    rng: np.random.Generator,
    *,
    efficiency: float = 1.0,
    resolution: int = 1,
    channel_id: int = 0,
) -> TagStream:
    """Turn photon arrival times (ps) into detector tags.

    Photons are kept with ``efficiency`` (1 when it is already part of the
    channel transmission), get Gaussian jitter, are quantized to
    ``resolution`` and merged with Poisson dark counts over ``span``.
    Dead time, when nonzero, is applied last.
    """
    arrivals = np.asarray(arrivals, dtype=np.int64)
    if efficiency < 1:
        arrivals = arrivals[thin_loss(np.ones(arrivals.size, bool), efficiency, rng)]
    t = arrivals.astype(np.float64)
    if jitter_sigma > 0 and t.size:
        t = t + rng.normal(0.0, jitter_sigma * 1e12, t.size)
    photon_tags = (np.rint(t / resolution) * resolution).astype(np.int64)
    np.maximum(photon_tags, 0, out=photon_tags)

    t0, t1 = span
    n_dark = rng.poisson(dark_rate * (t1 - t0) * 1e-12) if dark_rate > 0 and t1 > t0 else 0
    dark_tags = rng.integers(t0, t1, n_dark, dtype=np.int64, endpoint=False) if n_dark else np.empty(0, np.int64)
    dark_tags = dark_tags - dark_tags % resolution

    tags = np.concatenate([photon_tags, dark_tags])
    origin = np.concatenate([np.full(photon_tags.size, Origin.PHOTON, np.uint8), np.full(dark_tags.size, Origin.DARK, np.uint8)])
    order = np.argsort(tags, kind="stable")
    stream = TagStream(channel_id, tags[order], origin[order])
    if dead_time > 0:
        stream = apply_dead_time(stream, dead_time)
    return stream


def apply_dead_time(stream: TagStream, dead_time: float) -> TagStream:
    """Drop every tag closer than ``dead_time`` seconds to the previous kept tag."""
    dt = int(round(dead_time * 1e12))
    if dt <= 0 or len(stream) < 2:
        return stream
    tags = stream.tags.astype(np.int64)
    keep = np.zeros(tags.size, dtype=bool)
    last = None
    # Sequential by nature; only runs when dead time is enabled.
    for i, t in enumerate(tags.tolist()):
        if last is None or t - last >= dt:
            keep[i] = True
            last = t
    return TagStream(stream.channel_id, stream.tags[keep], stream.origin[keep])


def _outcome_probs(src: PairSourceModel, theta_a, theta_b):
    if src.polarization_type is PolarizationType.TYPE0_CORRELATED:
        probs = product_outcome_probs(theta_a, theta_b)
    else:
        probs = singlet_outcome_probs(theta_a, theta_b, src.state_visibility)
    return np.array([float(p) for p in probs])


# ---------------------------------------------------------------------------
# Detection patterns


@dataclass(frozen=True)
class DetectionPatterns:
    """Per-pair probabilities of putting ``counts1[i]`` photons on detector 1
    and ``counts2[i]`` on detector 2. Patterns with no detection are omitted,
    so ``probs.sum()`` is the probability that a pair is relevant."""

    counts1: np.ndarray
    counts2: np.ndarray
    probs: np.ndarray

    @property
    def relevant(self) -> float:
        return float(self.probs.sum())


def detection_patterns(config: ExperimentConfig) -> DetectionPatterns:
    e1, e2 = config.channels.transmission
    geo = config.geometry
    table: dict[tuple[int, int], float] = {}

    def add(k1, k2, p):
        if (k1, k2) != (0, 0):
            table[(k1, k2)] = table.get((k1, k2), 0.0) + p

    if isinstance(geo, CoincidenceGeometry):
        add(1, 0, e1 * (1 - e2))
        add(0, 1, (1 - e1) * e2)
        add(1, 1, e1 * e2)
    elif isinstance(geo, BellGeometry):
        ppp, ppm, pmp, _ = _outcome_probs(config.source, geo.theta_a, geo.theta_b)
        add(1, 1, e1 * e2 * ppp)
        add(1, 0, e1 * e2 * ppm + e1 * (1 - e2) * (ppp + ppm))
        add(0, 1, e1 * e2 * pmp + (1 - e1) * e2 * (ppp + pmp))
    elif isinstance(geo, HomGeometry):
        pc = hom_coincidence_prob(geo.delay, geo.indistinguishability, geo.sinc_width, geo.gauss_width, geo.center)
        add(1, 1, pc * e1 * e2)
        add(1, 0, pc * e1 * (1 - e2) + (1 - pc) * e1 * (1 - e1))
        add(0, 1, pc * (1 - e1) * e2 + (1 - pc) * e2 * (1 - e2))
        add(2, 0, 0.5 * (1 - pc) * e1**2)
        add(0, 2, 0.5 * (1 - pc) * e2**2)
    elif isinstance(geo, HbtGeometry):
        add(1, 0, 0.5 * e1)
        add(0, 1, 0.5 * e2)
    keys = sorted(table)
    probs = np.array([table[k] for k in keys])
    return DetectionPatterns(
        np.array([k[0] for k in keys], dtype=np.int64), np.array([k[1] for k in keys], dtype=np.int64), probs
    )


def _log_zero_prob(mean: float, m: float) -> float:
    if math.isinf(m):
        return -mean
    return -m * math.log1p(mean / m)


def _sample_truncated(mean: float, m: float, size: int, rng) -> np.ndarray:
    """Draws from the pair-number law conditioned on at least one pair."""
    if size == 0:
        return np.empty(0, dtype=np.int64)
    dist = stats.poisson(mean) if math.isinf(m) else stats.nbinom(m, m / (m + mean))
    p0 = math.exp(_log_zero_prob(mean, m))
    kmax = 8
    while dist.sf(kmax) > 1e-17 * (1 - p0) and kmax < 1 << 20:
        kmax *= 2
    k = np.arange(1, kmax + 1)
    cdf = np.cumsum(dist.pmf(k))
    cdf /= cdf[-1]
    return k[np.minimum(np.searchsorted(cdf, rng.random(size), side="right"), kmax - 1)]


# ---------------------------------------------------------------------------
# Engines


def _block_sparse(config: ExperimentConfig, patterns: DetectionPatterns, block):
    index, start, n = block
    rng = substream(config.seed, index)
    mu, m = config.source.mean_pairs_per_pulse, config.source.mode_count
    mean_rel = mu * patterns.relevant
    if mean_rel > 0:
        p_active = -math.expm1(_log_zero_prob(mean_rel, m))
        n_active = int(rng.binomial(n, p_active))
        active = np.sort(rng.choice(n, size=n_active, replace=False)) if n_active else np.empty(0, np.int64)
        per_pulse = _sample_truncated(mean_rel, m, n_active, rng)
        pair_pulse = np.repeat(active, per_pulse)
        pattern = rng.choice(patterns.probs.size, size=pair_pulse.size, p=patterns.probs / patterns.relevant)
        pulses1 = np.repeat(pair_pulse, patterns.counts1[pattern])
        pulses2 = np.repeat(pair_pulse, patterns.counts2[pattern])
    else:
        pulses1 = pulses2 = np.empty(0, np.int64)
    return _respond(config, rng, start, n, pulses1, pulses2)


def _block_dense(config: ExperimentConfig, block):
    index, start, n = block
    rng = substream(config.seed, index)
    e1, e2 = config.channels.transmission
    geo = config.geometry
    p1, p2 = [], []
    for c0 in range(0, n, _DENSE_CHUNK):
        cn = min(_DENSE_CHUNK, n - c0)
        pairs = sample_pairs(config.source, rng, cn)
        pulse = np.repeat(np.arange(c0, c0 + cn, dtype=np.int64), pairs)
        npairs = pulse.size
        if isinstance(geo, CoincidenceGeometry):
            ones = np.ones(npairs, bool)
            p1.append(pulse[thin_loss(ones, e1, rng)])
            p2.append(pulse[thin_loss(ones, e2, rng)])
        elif isinstance(geo, BellGeometry):
            pass_a, pass_b = bell_outcome(npairs, geo.theta_a, geo.theta_b, config.source, rng)
            p1.append(pulse[thin_loss(pass_a, e1, rng)])
            p2.append(pulse[thin_loss(pass_b, e2, rng)])
        elif isinstance(geo, HomGeometry):
            pc = hom_coincidence_prob(geo.delay, geo.indistinguishability, geo.sinc_width, geo.gauss_width, geo.center)
            cross = rng.random(npairs) < pc
            to_first = rng.random(npairs) < 0.5
            k1 = np.where(cross, 1, np.where(to_first, 2, 0))
            k2 = 2 - k1
            ph1 = np.repeat(pulse, k1)
            ph2 = np.repeat(pulse, k2)
            p1.append(ph1[thin_loss(np.ones(ph1.size, bool), e1, rng)])
            p2.append(ph2[thin_loss(np.ones(ph2.size, bool), e2, rng)])
        elif isinstance(geo, HbtGeometry):
            to_first = rng.random(npairs) < 0.5
            p1.append(pulse[thin_loss(to_first, e1, rng)])
            p2.append(pulse[thin_loss(~to_first, e2, rng)])
    return _respond(config, rng, start, n, np.concatenate(p1), np.concatenate(p2))


def _respond(config: ExperimentConfig, rng, start, n, pulses1, pulses2):
    period, offset = config.period_ps, config.emission_offset_ps
    span = (start * period, (start + n) * period)
    out = []
    for ch, pulses in ((0, pulses1), (1, pulses2)):
        arrivals = (pulses.astype(np.int64) + start) * period + offset
        s = detector_response(
            arrivals,
            config.channels.dark_rate[ch],
            span,
            config.detector_jitter_sigma,
            0.0,
            rng,
            resolution=config.timeline_resolution,
            channel_id=ch + 1,
        )
        out.append(s)
    return out


def _merge(parts, channel_id):
    tags = np.concatenate([p.tags for p in parts]) if parts else np.empty(0, np.uint64)
    origin = np.concatenate([p.origin for p in parts]) if parts else np.empty(0, np.uint8)
    order = np.argsort(tags, kind="stable")
    return TagStream(channel_id, tags[order], origin[order])


def _worker_count(workers):
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1") or 1)
    return max(1, int(workers))


def simulate(config: ExperimentConfig, *, engine: str = "sparse", workers: int | None = None):
    """Simulate a run and return the tag streams of detectors 1 and 2.

    The result is a deterministic function of ``config`` (seed included);
    ``workers`` only changes how many blocks run at once.
    """
    if engine == "sparse":
        patterns = detection_patterns(config)

        def job(b):
            return _block_sparse(config, patterns, b)

    elif engine == "dense":

        def job(b):
            return _block_dense(config, b)

    else:
        raise ValueError(f"unknown engine {engine!r}")

    blocks = config.blocks()
    n_workers = min(_worker_count(workers), len(blocks))
    if n_workers > 1:
        with ThreadPoolExecutor(n_workers) as pool:
            results = list(pool.map(job, blocks))
    else:
        results = [job(b) for b in blocks]

    s1 = _merge([r[0] for r in results], 1)
    s2 = _merge([r[1] for r in results], 2)
    if config.detector_dead_time > 0:
        s1 = apply_dead_time(s1, config.detector_dead_time)
        s2 = apply_dead_time(s2, config.detector_dead_time)
    return s1, s2
