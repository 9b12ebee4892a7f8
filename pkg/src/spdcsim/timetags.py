"""Coincidence analysis of two tag streams.

Time differences are always ``t2 - t1``. Histogram bin ``k`` covers the
half-open interval ``[offset + k*bin_width, offset + (k+1)*bin_width)``.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .montecarlo import TagStream

__all__ = [
    "CoincidenceHistogram",
    "CarEstimate",
    "coincidence_histogram",
    "count_coincidences",
    "rebin",
    "window_counts",
    "car_from_histogram",
    "singles_rates",
    "write_histogram_csv",
    "read_histogram_csv",
    "car_to_json",
]

_CHUNK = 1 << 16


@dataclass
class CoincidenceHistogram:
    bin_width: int
    offset: int
    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64).reshape(-1)
        if self.bin_width < 1:
            raise ValueError("bin_width must be >= 1 ps")
        if self.counts.size == 0:
            raise ValueError("histogram needs at least one bin")
        if np.any(self.counts < 0):
            raise ValueError("counts must be nonnegative")

    @property
    def bin_left(self) -> np.ndarray:
        return self.offset + self.bin_width * np.arange(self.counts.size, dtype=np.int64)

    @property
    def bin_centers(self) -> np.ndarray:
        return self.bin_left + 0.5 * self.bin_width

    @property
    def span(self) -> tuple[int, int]:
        return self.offset, self.offset + self.bin_width * self.counts.size

    def __eq__(self, other):
        if not isinstance(other, CoincidenceHistogram):
            return NotImplemented
        return (
            self.bin_width == other.bin_width
            and self.offset == other.offset
            and np.array_equal(self.counts, other.counts)
        )


@dataclass
class CarEstimate:
    car: float
    zero_peak_counts: int
    mean_accidental_counts: float
    accidental_peaks_used: int
    stat_uncertainty: float
    saturated: bool = False

    def to_dict(self) -> dict:
        d = asdict(self)
        # JSON has no infinities; a saturated estimate is flagged instead.
        for k in ("car", "stat_uncertainty"):
            if not math.isfinite(d[k]):
                d[k] = None
        return d


def _as_tags(s) -> np.ndarray:
    t = s.tags if isinstance(s, TagStream) else np.asarray(s)
    t = t.astype(np.int64)
    if t.size > 1 and np.any(t[1:] < t[:-1]):
        raise ValueError("tag streams must be sorted")
    return t


def coincidence_histogram(s1, s2, bin_width: int, range_ps: int, offset: int | None = None) -> CoincidenceHistogram:
    """Histogram of all pairwise differences ``t2 - t1`` within a span.

    The span has length ``2*range_ps`` and starts at ``offset`` (default
    ``-range_ps``). For each tag of stream 1, taken in order, a lower and an
    upper pointer into stream 2 bracket the tags inside the span; both
    pointers only move forward. Stream 1 is processed in chunks whose
    partial histograms are summed.
    """
    bin_width, range_ps = int(bin_width), int(range_ps)
    if bin_width < 1:
        raise ValueError("bin_width must be >= 1 ps")
    if range_ps <= 0 or range_ps % bin_width:
        raise ValueError("range must be a positive multiple of bin_width")
    t1, t2 = _as_tags(s1), _as_tags(s2)
    lo = -range_ps if offset is None else int(offset)
    nbins = 2 * range_ps // bin_width
    hi = lo + nbins * bin_width
    counts = np.zeros(nbins, dtype=np.int64)
    for c0 in range(0, t1.size, _CHUNK):
        a = t1[c0 : c0 + _CHUNK]
        # Sorted queries into a sorted array: equivalent to advancing two pointers.
        left = np.searchsorted(t2, a + lo, side="left")
        right = np.searchsorted(t2, a + hi, side="left")
        n = right - left
        total = int(n.sum())
        if total == 0:
            continue
        first = np.repeat(left - (np.cumsum(n) - n), n)
        j = first + np.arange(total)
        dt = t2[j] - np.repeat(a, n)
        counts += np.bincount((dt - lo) // bin_width, minlength=nbins)
    return CoincidenceHistogram(bin_width, lo, counts)


def count_coincidences(s1, s2, lo: int, hi: int) -> int:
    """Number of pairs with ``lo <= t2 - t1 < hi``."""
    t1, t2 = _as_tags(s1), _as_tags(s2)
    if lo >= hi:
        raise ValueError("need lo < hi")
    return int((np.searchsorted(t2, t1 + hi, "left") - np.searchsorted(t2, t1 + lo, "left")).sum())


def rebin(h: CoincidenceHistogram, k: int) -> CoincidenceHistogram:
    if k < 1 or h.counts.size % k:
        raise ValueError(f"rebin factor {k} must divide the {h.counts.size} bins")
    return CoincidenceHistogram(h.bin_width * k, h.offset, h.counts.reshape(-1, k).sum(axis=1))


def window_counts(h: CoincidenceHistogram, center: float, width: float) -> int:
    """Counts in the bins whose centers fall inside ``[center - width/2, center + width/2)``."""
    c = h.bin_centers
    sel = (c >= center - width / 2) & (c < center + width / 2)
    if not sel.any():
        raise ValueError(f"no bin centered within the window at {center} ps")
    return int(h.counts[sel].sum())


def car_from_histogram(h: CoincidenceHistogram, rep_period: int, window: int, n_side_peaks: int = 4) -> CarEstimate:
    """Zero-delay peak over the mean of ``n_side_peaks`` accidental peaks on each side."""
    if not rep_period > window:
        raise ValueError("rep_period must exceed the window")
    if n_side_peaks < 1:
        raise ValueError("need at least one side peak per side")
    reach = n_side_peaks * rep_period + window / 2
    lo, hi = h.span
    if lo > -reach or hi < reach:
        raise ValueError(f"histogram span {h.span} does not cover {n_side_peaks} side peaks per side")
    zero = window_counts(h, 0.0, window)
    sides = [window_counts(h, m * rep_period, window) for m in range(-n_side_peaks, n_side_peaks + 1) if m]
    total_acc = sum(sides)
    mean_acc = total_acc / len(sides)
    if total_acc == 0:
        return CarEstimate(math.inf, zero, 0.0, len(sides), math.inf, saturated=True)
    car = zero / mean_acc
    rel = math.sqrt((1 / zero if zero else 0.0) + 1 / total_acc)
    return CarEstimate(car, zero, mean_acc, len(sides), car * rel)


def singles_rates(s, duration: float) -> float:
    if not duration > 0:
        raise ValueError("duration must be > 0")
    n = len(s) if isinstance(s, TagStream) else np.asarray(s).size
    return n / duration


def write_histogram_csv(h: CoincidenceHistogram, path=None) -> str:
    buf = io.StringIO()
    buf.write("bin_left_ps,count\n")
    buf.writelines(f"{l},{c}\n" for l, c in zip(h.bin_left.tolist(), h.counts.tolist()))
    text = buf.getvalue()
    if path is not None:
        from .tagio import atomic_write

        atomic_write(path, text)
    return text


def read_histogram_csv(path) -> CoincidenceHistogram:
    data = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)
    with open(path, encoding="utf-8") as fh:
        if fh.readline().strip() != "bin_left_ps,count":
            raise ValueError(f"{path}: expected header 'bin_left_ps,count'")
    left, counts = data[:, 0], data[:, 1]
    widths = np.diff(left)
    if widths.size and np.any(widths != widths[0]):
        raise ValueError(f"{path}: bins are not uniform")
    bw = int(widths[0]) if widths.size else 1
    return CoincidenceHistogram(bw, int(left[0]), counts)


def car_to_json(est: CarEstimate) -> str:
    return json.dumps(est.to_dict(), indent=2, sort_keys=True) + "\n"
