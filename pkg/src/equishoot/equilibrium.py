"""Equilibrium functions built on a critical solution ``h``.

``h`` is interpolated with a monotone cubic (PCHIP) through the solver nodes
that are still attached to the separatrix, continued by the terminal
expansion and pinned to ``h(0) = gamma`` and ``h(1) = 1``.  The wealth
weight reuses the running integral ``I`` carried by the ODE, since

    int_0^y h/(1 - q) dq = I(y) - log(1 - y).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import bisect

from .ode import DomainError

TABLE_EPS = 1e-6
TAIL_S_MIN = 1e-12


class ThetaOutOfRange(ValueError):
    code = "ThetaOutOfRange"


def _open_unit(y, what="y"):
    arr = np.asarray(y, dtype=float)
    if np.any(~((arr > 0.0) & (arr < 1.0))):
        raise DomainError(f"{what} must lie in (0, 1)")
    return arr


@dataclass(frozen=True)
class EquilibriumFunctions:
    params: object
    xi0: float
    nodes_y: np.ndarray = field(repr=False)
    nodes_h: np.ndarray = field(repr=False)
    nodes_i: np.ndarray = field(repr=False)
    h_interp: PchipInterpolator = field(repr=False)
    i_interp: PchipInterpolator = field(repr=False)

    @property
    def g0(self) -> float:
        g = self.params.gamma
        return 2.0 / self.xi0 * (1.0 - g) ** (-g)

    def h(self, y):
        y = np.asarray(y, dtype=float)
        # polynomial evaluation at the pinned nodes can be off by an ulp
        out = self.h_interp(y)
        return np.where(y == 0.0, self.params.gamma, np.where(y == 1.0, 1.0, out))

    def i_log(self, y):
        return self.i_interp(np.asarray(y, dtype=float))


def build_equilibrium(cs, p, s_min: float = TAIL_S_MIN) -> EquilibriumFunctions:
    y, h, i = cs.extended(s_min=s_min)
    y = np.concatenate([[0.0], y, [1.0]])
    h = np.concatenate([[p.gamma], h, [1.0]])
    i = np.concatenate([[0.0], i, [cs.fit.i_one]])
    # drop nodes that collapse onto each other in double precision near y = 1
    keep = np.concatenate([[True], np.diff(y) > 0.0])
    y, h, i = y[keep], h[keep], i[keep]
    return EquilibriumFunctions(
        params=p,
        xi0=cs.xi0,
        nodes_y=y,
        nodes_h=h,
        nodes_i=i,
        h_interp=PchipInterpolator(y, h),
        i_interp=PchipInterpolator(y, i),
    )


def drift_vol(y, eq: EquilibriumFunctions):
    """Drift ``mu_Y`` and volatility ``sigma_Y`` of the consumption share."""
    y = _open_unit(y)
    p = eq.params
    g, d = p.gamma, p.delta
    h = eq.h(y)
    num = y * h * (2.0 * g * g + d * y * h) - g * (g + 1.0) * (2.0 * y - 1.0)
    mu = p.sigma2 * (1.0 - y) * num / (2.0 * g * y * h * h)
    sigma = p.sigma_d * (1.0 - y) / h
    return mu, sigma


def drift_ratio(y, eq: EquilibriumFunctions):
    """``mu_Y / sigma_Y^2`` in the form ``N / (2 gamma y (1 - y))``, free of cancellation."""
    y = _open_unit(y)
    return drift_numerator(y, eq) / (2.0 * eq.params.gamma * y * (1.0 - y))


def drift_numerator(y, eq: EquilibriumFunctions):
    p = eq.params
    g, d = p.gamma, p.delta
    y = np.asarray(y, dtype=float)
    h = eq.h(y)
    return y * h * (2.0 * g * g + d * y * h) - g * (g + 1.0) * (2.0 * y - 1.0)


def rate_and_mpr(y, eq: EquilibriumFunctions):
    y = _open_unit(y)
    p = eq.params
    g = p.gamma
    h = eq.h(y)
    r = (
        p.beta2
        + y * (p.beta1 - p.beta2)
        + g * p.mu_d
        - 0.5 * g * (g + 1.0) * p.sigma2
        - g * (g + 1.0) * p.sigma2 * (1.0 - y) / (2.0 * y * h * h)
    )
    kappa = g * p.sigma_d * ((1.0 - y) / (y * h) + 1.0)
    return r, kappa


def wealth_weight(y, eq: EquilibriumFunctions, allow_limit: bool = True):
    """``g(y)``; the limit value 0 is returned at ``y = 1`` unless ``allow_limit`` is off."""
    arr = np.asarray(y, dtype=float)
    if np.any((arr < 0.0) | (arr > 1.0)) or (not allow_limit and np.any(arr == 1.0)):
        raise DomainError("g is defined on [0, 1)")
    return eq.g0 * (1.0 - arr) * np.exp(-eq.i_log(arr))


def clearing_map(y, eq: EquilibriumFunctions):
    p = eq.params
    return wealth_weight(y, eq) * p.d0 * (1.0 - np.asarray(y, dtype=float)) ** p.gamma


def solve_initial_share(theta2: float, eq: EquilibriumFunctions, xtol: float = 1e-12) -> float:
    """Root ``Y0`` of ``g(y) D0 (1 - y)^gamma = theta2``."""
    top = eq.g0 * eq.params.d0
    if not (0.0 < theta2 < top):
        raise ThetaOutOfRange(f"theta2 must lie in (0, g(0) D0) = (0, {top!r}); got {theta2!r}")
    return float(bisect(lambda y: float(clearing_map(y, eq)) - theta2, 0.0, 1.0, xtol=xtol))


def consumption_rates(d_t, y_t):
    d_t = np.asarray(d_t, dtype=float)
    y_t = np.asarray(y_t, dtype=float)
    if np.any(d_t <= 0.0):
        raise DomainError("dividend level must be positive")
    _open_unit(y_t, "y_t")
    c1 = d_t * y_t
    return c1, d_t - c1


def tabulate(eq: EquilibriumFunctions, n: int = 201, eps: float = TABLE_EPS) -> np.ndarray:
    """Columns y, h, r, kappa, mu_y, sigma_y, g on a uniform grid clipped to ``[eps, 1-eps]``."""
    y = np.linspace(0.0, 1.0, n)
    y = y[(y >= eps) & (y <= 1.0 - eps)]
    y = np.unique(np.concatenate([[eps], y, [1.0 - eps]]))
    r, kappa = rate_and_mpr(y, eq)
    mu, sig = drift_vol(y, eq)
    return np.column_stack([y, eq.h(y), r, kappa, mu, sig, wealth_weight(y, eq)])


TABLE_HEADER = ["y", "h", "r", "kappa", "mu_y", "sigma_y", "g"]


def write_table(path, table, header=TABLE_HEADER, comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in table:
            w.writerow([repr(float(v)) for v in row])


def limit_fit(y, values):
    """Intercept of a quadratic fit, used to read off boundary limits."""
    coef = np.polyfit(np.asarray(y, float), np.asarray(values, float), 2)
    return float(coef[-1])


def y1_limit_ratio(p) -> float:
    return ((p.gamma - 1.0) * p.gamma + p.delta) / (2.0 * p.gamma)


def y0_limit_ratio(p) -> float:
    return 0.5 * (1.0 + p.gamma)

