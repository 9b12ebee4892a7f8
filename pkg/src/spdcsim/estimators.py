"""Parameter estimation for pair-source experiments."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .fitting import FitError, FitReport, damped_least_squares
from .physics import HomProfileParams, hom_profile, singlet_outcome_probs

__all__ = [
    "fit_spdc_power",
    "fit_car_curve",
    "mu_from_singles",
    "fit_hom_dip",
    "visibility_conservative",
    "BellCounts",
    "ChshResult",
    "chsh_S",
    "chsh_sigma",
    "chsh_sigma_numeric",
    "correlations",
    "expected_bell_counts",
    "visibility",
    "G2Estimate",
    "g2_zero_estimate",
    "ChshAngles",
    "optimal_chsh_angles",
    "FitError",
]


# ---------------------------------------------------------------------------
# Gain law


def _gain_model(x, pump):
    alpha, gamma = x
    return alpha * np.sinh(gamma * np.sqrt(pump)) ** 2


def fit_spdc_power(pump_power, spdc_power, weights=None, *, max_iter=200) -> FitReport:
    """Fit ``alpha * sinh(gamma*sqrt(P))**2`` to measured down-converted power.

    Starting values come from the low-power expansion: the log of the
    efficiency is linear in pump power with slope ``gamma**2 / 3`` and
    intercept ``log(alpha * gamma**2)``. ``weights`` multiply the residuals
    (use ``1/sigma``); by default every point is weighted by ``1/y``, i.e.
    relative errors.
    """
    pump = np.asarray(pump_power, dtype=float)
    y = np.asarray(spdc_power, dtype=float)
    if pump.shape != y.shape or pump.ndim != 1:
        raise ValueError("pump_power and spdc_power must be matching 1-d arrays")
    if np.unique(pump).size < 3:
        raise FitError("need at least three distinct pump powers")
    if np.any(pump <= 0) or np.any(y <= 0):
        raise ValueError("powers must be positive")
    w = 1 / y if weights is None else np.asarray(weights, dtype=float)

    slope, intercept = np.polyfit(pump, np.log(y / pump), 1)
    gamma0 = math.sqrt(3 * slope) if slope > 0 else math.sqrt(3e-3 / pump.max())
    alpha0 = math.exp(intercept) / gamma0**2

    def res(x):
        return w * (_gain_model(x, pump) - y)

    def jac(x):
        alpha, gamma = x
        s = np.sqrt(pump)
        return w[:, None] * np.column_stack([np.sinh(gamma * s) ** 2, alpha * np.sinh(2 * gamma * s) * s])

    rep = damped_least_squares(
        res, [alpha0, gamma0], ["alpha", "gamma"], jac, data_norm=float(np.linalg.norm(w * y)), max_iter=max_iter
    )
    rep.extras["alpha0"], rep.extras["gamma0"] = alpha0, gamma0
    return rep


# ---------------------------------------------------------------------------
# CAR curve


def mu_from_singles(singles_rate, dark_rate, rep_rate, eta):
    """Mean pairs per pulse implied by a channel's singles rate."""
    return (np.asarray(singles_rate, dtype=float) - dark_rate) / (rep_rate * eta)


def _car_terms(mu, eta1, eta2, d1, d2, mode_count, period_over_window=1.0):
    excess = 1 + (0 if math.isinf(mode_count) else mu / mode_count)
    a = mu * eta1 + d1
    b = mu * eta2 + d2
    e = d1 * d2 * (period_over_window - 1)
    den = a * b + e
    model = mu * eta1 * eta2 * excess / den + 1
    deta2 = mu * eta1 * excess * (a * d2 + e) / den**2
    return model, deta2


def fit_car_curve(
    mu, car, eta1, eta2_measured, d1, d2, weights=None, *, mode_count=math.inf, period_over_window=1.0
) -> FitReport:
    """Fit the channel-2 coupling as a multiple of its measured value.

    All other quantities in the CAR model are held fixed (see
    :func:`car_model` for ``period_over_window``). The result has
    parameters ``coupling_ratio`` and ``eta2`` (the implied total
    efficiency of channel 2).
    """
    mu = np.asarray(mu, dtype=float)
    car = np.asarray(car, dtype=float)
    if mu.shape != car.shape or mu.size < 3:
        raise FitError("need at least three (mu, CAR) points")
    if d2 <= 0:
        raise FitError("with no channel-2 dark counts the CAR does not depend on its coupling")
    order = np.argsort(mu)
    peak = int(np.argmax(car[order]))
    if peak == 0 or peak == mu.size - 1:
        raise FitError("CAR data are monotone; the peak needed to identify the coupling is not resolved")
    w = np.ones_like(car) if weights is None else np.asarray(weights, dtype=float)

    def res(x):
        return w * (_car_terms(mu, eta1, x[0] * eta2_measured, d1, d2, mode_count, period_over_window)[0] - car)

    def jac(x):
        return (w * eta2_measured * _car_terms(mu, eta1, x[0] * eta2_measured, d1, d2, mode_count, period_over_window)[1])[:, None]

    grid = np.logspace(-3, 3, 241)
    sse = [float(np.sum(res([g]) ** 2)) for g in grid]
    r0 = float(grid[int(np.argmin(sse))])
    # One parameter with an analytic derivative: a tight gradient tolerance is cheap.
    rep = damped_least_squares(res, [r0], ["coupling_ratio"], jac, data_norm=float(np.linalg.norm(w * car)), gtol=1e-12)
    rep.params["eta2"] = rep.params["coupling_ratio"] * eta2_measured
    rep.sigmas["eta2"] = rep.sigmas["coupling_ratio"] * eta2_measured
    return rep


# ---------------------------------------------------------------------------
# HOM dip

_HOM_NAMES = ["baseline", "visibility", "sinc_width", "gauss_width", "center"]


def _hom_eval(x, u):
    # Trial steps may push a width through zero; the cost then rejects them.
    with np.errstate(all="ignore"):
        return _hom_eval_raw(x, u)


def _hom_eval_raw(x, u):
    b, v, s, g, c = x
    d = u - c
    arg = np.pi * d / s
    sn = np.sinc(arg / np.pi)
    with np.errstate(invalid="ignore", divide="ignore"):
        dsn = np.where(np.abs(arg) > 1e-8, (arg * np.cos(arg) - np.sin(arg)) / arg**2, -arg / 3)
    ga = np.exp(-(d**2) / (2 * g**2))
    f = sn * ga
    model = b * (1 - v * f)
    df_dd = dsn * (np.pi / s) * ga - sn * ga * d / g**2
    J = np.column_stack(
        [
            1 - v * f,
            -b * f,
            -b * v * dsn * (-np.pi * d / s**2) * ga,
            -b * v * sn * ga * d**2 / g**3,
            b * v * df_dd,
        ]
    )
    return model, J


def fit_hom_dip(delays, counts, weights=None) -> FitReport:
    """Fit a Gaussian-weighted sinc dip to coincidence counts versus delay.

    Delays are rescaled internally to order one. Several width pairs are
    tried as starting points and the lowest cost is kept. Weights default
    to Poisson, ``1/sqrt(counts)``.
    """
    tau = np.asarray(delays, dtype=float)
    y = np.asarray(counts, dtype=float)
    if tau.shape != y.shape or tau.size < 7:
        raise FitError("need at least seven delay points")
    if np.ptp(tau) == 0:
        raise FitError("all delays are identical")
    w = 1 / np.sqrt(np.maximum(y, 1)) if weights is None else np.asarray(weights, dtype=float)

    t_mid, t_scale = float(np.mean(tau)), float(np.ptp(tau) / 2)
    u = (tau - t_mid) / t_scale
    order = np.argsort(u)
    uo, yo = u[order], y[order]
    k = max(1, uo.size // 5)
    b0 = float(np.median(np.concatenate([yo[:k], yo[-k:]])))
    i_min = int(np.argmin(yo))
    c0 = float(uo[i_min])
    v0 = float(np.clip(1 - yo[i_min] / b0, 0.02, 0.99)) if b0 > 0 else 0.5
    below = uo[yo < b0 * (1 - v0 / 2)]
    spacing = float(np.median(np.diff(uo)))
    hw = max(float(np.ptp(below)) / 2 if below.size else 0.0, spacing)
    norm = float(np.linalg.norm(w * y))

    def res(x):
        return w * (_hom_eval(x, u)[0] - y)

    def jac(x):
        return w[:, None] * _hom_eval(x, u)[1]

    best = None
    scale = np.array([b0, 1.0, 1.0, 1.0, 1.0])
    for ks, kg in itertools.product((1.2, 2.0, 3.5), (0.8, 1.5, 4.0)):
        x0 = [b0, v0, ks * hw, kg * hw, c0]
        try:
            rep = damped_least_squares(res, x0, _HOM_NAMES, jac, data_norm=norm, x_scale=scale * np.array([1, 1, hw, hw, hw]))
        except FitError:
            continue
        key = (not rep.converged, rep.residual_norm)
        if best is None or key < best[0]:
            best = (key, rep)
    if best is None:
        raise FitError("HOM fit failed from every starting point")
    rep = best[1]
    # Back to physical delay units; the profile is even in both widths.
    p, s = rep.params, rep.sigmas
    for name in ("sinc_width", "gauss_width"):
        p[name] = abs(p[name]) * t_scale
        s[name] *= t_scale
    p["center"] = p["center"] * t_scale + t_mid
    s["center"] *= t_scale
    return rep


def hom_params(rep: FitReport) -> HomProfileParams:
    p = rep.params
    return HomProfileParams(p["baseline"], float(np.clip(p["visibility"], 0, 1)), p["sinc_width"], p["gauss_width"], p["center"])


def visibility_conservative(counts, fit: FitReport) -> float:
    """Dip depth from the lowest raw point against the fitted asymptote."""
    return 1 - float(np.min(counts)) / fit.params["baseline"]


# ---------------------------------------------------------------------------
# CHSH

# Indices into the 4x4 count table: rows (a, a+pi/2, a', a'+pi/2), columns
# (b, b+pi/2, b', b'+pi/2). Each correlation uses (++, --, -+, +-) cells.
_FAMILIES = {
    "E(a,b)": ((0, 0), (1, 1), (1, 0), (0, 1)),
    "E(a,b')": ((0, 2), (1, 3), (1, 2), (0, 3)),
    "E(a',b)": ((2, 0), (3, 1), (3, 0), (2, 1)),
    "E(a',b')": ((2, 2), (3, 3), (3, 2), (2, 3)),
}
_SIGNS = {"E(a,b)": 1.0, "E(a,b')": -1.0, "E(a',b)": 1.0, "E(a',b')": 1.0}


@dataclass
class BellCounts:
    """Coincidences for the 16 analyzer settings of a CHSH test.

    ``counts[i, j]`` belongs to analyzer A at ``angles_a[i]`` and analyzer B
    at ``angles_b[j]``, where the angle lists are ``(a, a+pi/2, a',
    a'+pi/2)`` and ``(b, b+pi/2, b', b'+pi/2)``.
    """

    theta_a: float
    theta_a_prime: float
    theta_b: float
    theta_b_prime: float
    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=float)
        if self.counts.shape != (4, 4):
            raise ValueError("BellCounts needs a 4x4 table of 16 counts")
        if np.any(self.counts < 0):
            raise ValueError("counts must be nonnegative")

    @property
    def angles_a(self):
        a, ap = self.theta_a, self.theta_a_prime
        return (a, a + math.pi / 2, ap, ap + math.pi / 2)

    @property
    def angles_b(self):
        b, bp = self.theta_b, self.theta_b_prime
        return (b, b + math.pi / 2, bp, bp + math.pi / 2)

    def settings(self):
        """The 16 ``(i, j, theta_a, theta_b)`` settings in row-major order."""
        return [(i, j, ta, tb) for i, ta in enumerate(self.angles_a) for j, tb in enumerate(self.angles_b)]

    def to_dict(self) -> dict:
        counts = [{"i": i, "j": j, "count": _num(self.counts[i, j])} for i in range(4) for j in range(4)]
        return {
            "settings": {
                "theta_a": self.theta_a,
                "theta_a_prime": self.theta_a_prime,
                "theta_b": self.theta_b,
                "theta_b_prime": self.theta_b_prime,
            },
            "counts": counts,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d) -> "BellCounts":
        s = d["settings"]
        table = np.full((4, 4), np.nan)
        for rec in d["counts"]:
            i, j = int(rec["i"]), int(rec["j"])
            if not (0 <= i < 4 and 0 <= j < 4):
                raise ValueError(f"setting index out of range: {rec}")
            table[i, j] = rec["count"]
        if np.isnan(table).any() or len(d["counts"]) != 16:
            raise ValueError("BellCounts document must list each of the 16 settings exactly once")
        return cls(s["theta_a"], s["theta_a_prime"], s["theta_b"], s["theta_b_prime"], table)

    @classmethod
    def from_json(cls, text: str) -> "BellCounts":
        return cls.from_dict(json.loads(text))


def _num(v):
    v = float(v)
    return int(v) if v.is_integer() else v


@dataclass
class ChshResult:
    S: float
    sigma_S: float
    E_values: dict[str, float]
    visibility_equiv: float
    flags: list[str] = field(default_factory=list)

    @property
    def violation(self) -> bool:
        return abs(self.S) > 2

    def to_dict(self) -> dict:
        return {
            "S": self.S,
            "sigma_S": self.sigma_S,
            "E_values": dict(self.E_values),
            "visibility_equiv": self.visibility_equiv,
            "violation": self.violation,
            "flags": list(self.flags),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _family_sums(c, name):
    cells = _FAMILIES[name]
    plus = c[cells[0]] + c[cells[1]]
    minus = c[cells[2]] + c[cells[3]]
    if plus + minus == 0:
        raise ValueError(f"all four counts of {name} are zero; the correlation is undefined")
    return plus, minus


def correlations(b: BellCounts) -> dict[str, float]:
    out = {}
    for name in _FAMILIES:
        plus, minus = _family_sums(b.counts, name)
        out[name] = (plus - minus) / (plus + minus)
    return out


def _s_from_table(c) -> float:
    return sum(_SIGNS[n] * (p - m) / (p + m) for n in _FAMILIES for p, m in [_family_sums(c, n)])


def _count_sigmas(c):
    # One-count rule: an empty cell still carries an uncertainty of one count.
    return np.where(c > 0, np.sqrt(c), 1.0)


def _s_gradient(c):
    g = np.zeros((4, 4))
    for name, cells in _FAMILIES.items():
        plus, minus = _family_sums(c, name)
        tot2 = (plus + minus) ** 2
        for cell in cells[:2]:
            g[cell] = _SIGNS[name] * 2 * minus / tot2
        for cell in cells[2:]:
            g[cell] = -_SIGNS[name] * 2 * plus / tot2
    return g


def chsh_sigma(b: BellCounts) -> float:
    """Poisson uncertainty of S by first-order propagation through every count."""
    return float(math.sqrt(np.sum((_count_sigmas(b.counts) * _s_gradient(b.counts)) ** 2)))


def chsh_sigma_numeric(b: BellCounts, rel_step: float = 1e-3) -> float:
    """Same as :func:`chsh_sigma` with central-difference derivatives."""
    c = b.counts
    grad = np.zeros((4, 4))
    for cell in itertools.product(range(4), range(4)):
        h = rel_step * c[cell] if c[cell] > 0 else rel_step
        up, dn = c.copy(), c.copy()
        up[cell] += h
        dn[cell] -= h
        grad[cell] = (_s_from_table(up) - _s_from_table(dn)) / (2 * h)
    return float(math.sqrt(np.sum((_count_sigmas(c) * grad) ** 2)))


def chsh_S(b: BellCounts) -> ChshResult:
    E = correlations(b)
    S = sum(_SIGNS[n] * E[n] for n in _FAMILIES)
    flags = ["zero-count-cells"] if np.any(b.counts == 0) else []
    return ChshResult(float(S), chsh_sigma(b), E, float(S / (2 * math.sqrt(2))), flags)


def expected_bell_counts(theta_a, theta_a_prime, theta_b, theta_b_prime, state_visibility, n_pairs, background=0.0) -> BellCounts:
    """Expected coincidence table for ``n_pairs`` detected pairs per setting plus a flat background."""
    table = BellCounts(theta_a, theta_a_prime, theta_b, theta_b_prime, np.zeros((4, 4)))
    ta = np.array(table.angles_a)[:, None]
    tb = np.array(table.angles_b)[None, :]
    ppp = singlet_outcome_probs(ta, tb, state_visibility)[0]
    table.counts = n_pairs * ppp + background
    return table


def visibility(c_max: float, c_min: float) -> float:
    if c_min < 0 or c_max <= 0:
        raise ValueError("need c_max > 0 and c_min >= 0")
    if c_max < c_min:
        raise ValueError("c_max must not be below c_min")
    return (c_max - c_min) / (c_max + c_min)


# ---------------------------------------------------------------------------
# g2 and mode number


@dataclass
class G2Estimate:
    g2: float
    modes: float
    sigma_g2: float
    flag: str = "ok"

    @property
    def sigma_modes(self) -> float:
        """First-order propagation through M = 1/(g2 - 1)."""
        if not math.isfinite(self.modes):
            return math.inf
        return self.sigma_g2 / (self.g2 - 1) ** 2

    def to_dict(self) -> dict:
        fin = math.isfinite(self.modes)
        return {
            "g2": self.g2,
            "modes": self.modes if fin else None,
            "sigma_g2": self.sigma_g2,
            "sigma_modes": self.sigma_modes if fin else None,
            "flag": self.flag,
        }


def g2_zero_estimate(singles1: int, singles2: int, coincidences: int, pulses: int) -> G2Estimate:
    """Zero-delay g2 from pulsed singles and coincidence counts, with the implied mode number.

    ``flag`` is ``"poisson-limit"`` when g2 <= 1 (mode number infinite) and
    ``"below-single-mode"`` when g2 > 2 (mode number below one; the value
    is still reported).
    """
    if pulses <= 0 or singles1 <= 0 or singles2 <= 0:
        raise ValueError("need positive pulses and singles")
    p1, p2, pc = singles1 / pulses, singles2 / pulses, coincidences / pulses
    g2 = pc / (p1 * p2)
    rel = math.sqrt((1 / coincidences if coincidences else 1.0) + 1 / singles1 + 1 / singles2)
    sigma = g2 * rel
    if g2 <= 1:
        return G2Estimate(g2, math.inf, sigma, "poisson-limit")
    modes = 1 / (g2 - 1)
    return G2Estimate(g2, modes, sigma, "below-single-mode" if g2 > 2 else "ok")


# ---------------------------------------------------------------------------
# Optimal analyzer settings


@dataclass
class ChshAngles:
    theta_a: float
    theta_a_prime: float
    theta_b: float
    theta_b_prime: float
    s_max: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _s_analytic(b, ap, bp, v, a=0.0):
    # Werner-state correlation E = -V cos 2(a - b).
    def e(x, y):
        return -v * np.cos(2 * (x - y))

    return e(a, b) - e(a, bp) + e(ap, b) + e(ap, bp)


def optimal_chsh_angles(state_visibility: float) -> ChshAngles:
    """Analyzer angles maximizing S for a Werner state, with ``theta_a`` fixed at 0.

    A 1 degree grid over the other three angles is refined by a quasi-Newton
    search. Angles are returned in ``[0, pi)``.
    """
    v = float(state_visibility)
    if not 0 < v <= 1:
        raise ValueError("state_visibility must lie in (0, 1]")
    grid = np.deg2rad(np.arange(180.0))
    b, ap, bp = np.meshgrid(grid, grid, grid, indexing="ij", sparse=True)
    s = _s_analytic(b, ap, bp, v)
    i, j, k = np.unravel_index(int(np.argmax(s)), s.shape)
    x0 = np.array([grid[i], grid[j], grid[k]])
    res = optimize.minimize(lambda x: -_s_analytic(x[0], x[1], x[2], v), x0, method="BFGS", options={"gtol": 1e-12})
    x = res.x if -res.fun >= s[i, j, k] else x0
    b_opt, ap_opt, bp_opt = (float(np.mod(t, np.pi)) for t in x)
    return ChshAngles(0.0, ap_opt, b_opt, bp_opt, float(_s_analytic(b_opt, ap_opt, bp_opt, v)))
