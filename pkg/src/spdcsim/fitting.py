"""Levenberg-Marquardt least squares with a scaled-gradient stopping rule.

The scaled gradient is

    g_j = |(J^T r)_j| * s_j / ||y||^2

with ``s_j`` the typical size of parameter ``j`` and ``||y||`` the norm of
the weighted data: the relative change of the cost per relative change of
a parameter. It is scale free, so one threshold serves models whose
parameters differ by twenty orders of magnitude. A fit is reported as
converged only when this quantity is below ``gtol``; a vanishing step
merely stops the iteration.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = ["FitReport", "FitError", "damped_least_squares", "numeric_jacobian"]


class FitError(ValueError):
    """Input data cannot identify the model parameters."""


@dataclass
class FitReport:
    params: dict[str, float]
    sigmas: dict[str, float]
    residual_norm: float
    iterations: int
    converged: bool
    gradient_norm: float = math.nan
    flags: list[str] = field(default_factory=list)
    extras: dict[str, float] = field(default_factory=dict)

    def __getitem__(self, name):
        return self.params[name]

    def to_dict(self) -> dict:
        def clean(v):
            if isinstance(v, float) and not math.isfinite(v):
                return None
            return v

        return {
            "params": {k: clean(float(v)) for k, v in self.params.items()},
            "sigmas": {k: clean(float(v)) for k, v in self.sigmas.items()},
            "residual_norm": clean(float(self.residual_norm)),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "gradient_norm": clean(float(self.gradient_norm)),
            "flags": list(self.flags),
            "extras": {k: clean(float(v)) for k, v in self.extras.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def numeric_jacobian(fun, x, rel_step=1e-6):
    """Central differences, step relative to each parameter (absolute at zero)."""
    x = np.asarray(x, dtype=float)
    h = rel_step * np.where(x != 0, np.abs(x), 1.0)
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h[j]
        cols.append((np.asarray(fun(x + e)) - np.asarray(fun(x - e))) / (2 * h[j]))
    return np.column_stack(cols)


def damped_least_squares(
    fun,
    x0,
    names,
    jac=None,
    *,
    data_norm: float | None = None,
    x_scale=None,
    max_iter: int = 200,
    gtol: float = 1e-8,
    xtol: float = 1e-12,
) -> FitReport:
    """Minimize ``0.5*||fun(x)||**2``.

    ``fun`` returns weighted residuals. ``jac`` returns their Jacobian and
    defaults to central differences. ``data_norm`` normalizes the scaled
    gradient (defaults to the initial residual norm), ``x_scale`` gives
    typical parameter sizes (defaults to ``|x0|``).
    """
    x = np.array(x0, dtype=float)
    p = x.size
    if len(names) != p:
        raise ValueError("one name per parameter")
    jac = jac or (lambda v: numeric_jacobian(fun, v))
    r = np.asarray(fun(x), dtype=float)
    n = r.size
    if not np.all(np.isfinite(r)):
        raise FitError("residuals are not finite at the starting point")
    scale = np.where(x != 0, np.abs(x), 1.0) if x_scale is None else np.asarray(x_scale, dtype=float)
    norm_y = float(data_norm) if data_norm else max(float(np.linalg.norm(r)), np.finfo(float).tiny)
    cost = 0.5 * float(r @ r)
    lam = 1e-3
    converged = False
    flags: list[str] = []
    it = 0
    J = np.asarray(jac(x), dtype=float)
    gnorm = _scaled_gradient(J, r, scale, norm_y)

    while it < max_iter:
        if gnorm < gtol:
            converged = True
            break
        it += 1
        col = np.sqrt(np.maximum(np.einsum("ij,ij->j", J, J), np.finfo(float).tiny))
        Js = J / col
        step_taken = False
        while lam < 1e16:
            A = np.vstack([Js, math.sqrt(lam) * np.eye(p)])
            b = np.concatenate([-r, np.zeros(p)])
            z = np.linalg.lstsq(A, b, rcond=None)[0]
            dx = z / col
            x_new = x + dx
            r_new = np.asarray(fun(x_new), dtype=float)
            cost_new = 0.5 * float(r_new @ r_new) if np.all(np.isfinite(r_new)) else math.inf
            if cost_new <= cost:
                step_taken = True
                break
            lam *= 10
        if not step_taken:
            flags.append("damping-exhausted")
            break
        small = np.all(np.abs(dx) <= xtol * (np.abs(x) + xtol)) or np.all(np.abs(dx) <= xtol * scale)
        x, r, cost = x_new, r_new, cost_new
        lam = max(lam / 10, 1e-12)
        J = np.asarray(jac(x), dtype=float)
        gnorm = _scaled_gradient(J, r, scale, norm_y)
        if small:
            converged = gnorm < gtol
            if not converged:
                flags.append("step-below-xtol")
            break
    else:
        converged = gnorm < gtol

    if not converged and it >= max_iter:
        flags.append("max-iterations")

    sig = _sigmas(J, r, n, p, flags)
    return FitReport(
        params=dict(zip(names, map(float, x))),
        sigmas=dict(zip(names, map(float, sig))),
        residual_norm=float(np.linalg.norm(r)),
        iterations=it,
        converged=bool(converged),
        gradient_norm=float(gnorm),
        flags=flags,
    )


def _scaled_gradient(J, r, scale, norm_y) -> float:
    return float(np.max(np.abs(J.T @ r) * scale) / norm_y**2) if r.size else 0.0


def _sigmas(J, r, n, p, flags):
    dof = n - p
    s2 = float(r @ r) / dof if dof > 0 else math.nan
    try:
        cov = np.linalg.inv(J.T @ J)
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(J.T @ J)
        flags.append("singular-normal-matrix")
    return np.sqrt(np.abs(np.diag(cov)) * s2)
