"""Scale density, speed measure and long-run survival classification.

All integrals run in the logit variable ``z = log(y / (1 - y))``.  There
``mu_Y / sigma_Y^2 dy = N(y) / (2 gamma) dz`` with a bounded numerator
``N``, so ``log rho`` is a smooth cumulative integral.  Improper ends are
never integrated numerically to the boundary: a power law is fitted to the
integrand on a short window next to each end and its tail is added in
closed form, and divergence is decided from the fitted exponent.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from enum import Enum

import numpy as np
from scipy.integrate import cumulative_simpson
from scipy.interpolate import CubicSpline
from scipy.special import expit, logit

from .equilibrium import EquilibriumFunctions, drift_numerator
from .ode import DomainError
from .params import RegimeTag, survival_regime

DEFAULT_ANCHOR = 0.5
FIT_WINDOW = (1e-5, 1e-3)
TAIL_WINDOW = (1e-8, 1e-6)
GUARD_BAND = 0.02
Z_STEP = 0.005


class InconclusiveTail(ArithmeticError):
    code = "InconclusiveTail"


class Classification(str, Enum):
    BOTH_SURVIVE = "BothSurvive"
    TRADER2_EXTINCT = "Trader2Extinct"
    INDETERMINATE = "Indeterminate"
    RECURRENT_INDETERMINATE = "RecurrentIndeterminate"


class Provenance(str, Enum):
    PAPER_PROVED = "PaperProved"
    NUMERICALLY_INDICATED = "NumericallyIndicated"


def _z_grid(anchor: float, s_min: float, step: float):
    za = float(logit(anchor))
    z_lo, z_hi = float(logit(s_min)), -float(logit(s_min))
    n_left = max(int(math.ceil((za - z_lo) / step)), 4)
    n_right = max(int(math.ceil((z_hi - za) / step)), 4)
    # even interval counts keep Simpson's rule on its native panels
    n_left += n_left % 2
    n_right += n_right % 2
    left = np.linspace(z_lo, za, n_left + 1)
    right = np.linspace(za, z_hi, n_right + 1)
    return np.concatenate([left, right[1:]]), n_left


def _y_and_s(z):
    # s = 1 - y computed without cancellation
    return expit(z), expit(-z)


@dataclass
class ScaleData:
    """``log rho`` and the cumulative speed measure on a logit grid."""

    anchor: float
    z: np.ndarray
    y: np.ndarray
    s: np.ndarray
    log_rho: np.ndarray
    log_speed: np.ndarray
    eq: EquilibriumFunctions

    def __post_init__(self):
        self._spline = CubicSpline(self.z, self.log_rho)

    def log_rho_at(self, y):
        y = np.asarray(y, dtype=float)
        out = self._spline(logit(y))
        return np.where(y == self.anchor, 0.0, out)


def scale_data(eq: EquilibriumFunctions, anchor: float = DEFAULT_ANCHOR, s_min: float = TAIL_WINDOW[0],
               step: float = Z_STEP) -> ScaleData:
    if not (0.0 < anchor < 1.0):
        raise DomainError(f"anchor must lie in (0, 1); got {anchor!r}")
    p = eq.params
    z, ia = _z_grid(anchor, s_min, step)
    y, s = _y_and_s(z)
    dlog = -drift_numerator(y, eq) / p.gamma
    log_rho = np.empty_like(z)
    log_rho[ia:] = cumulative_simpson(dlog[ia:], x=z[ia:], initial=0.0)
    log_rho[: ia + 1] = -cumulative_simpson(dlog[: ia + 1][::-1], x=-z[: ia + 1][::-1], initial=0.0)[::-1]
    log_rho[ia] = 0.0
    # speed density 1/(rho sigma^2) = h^2 / (rho sigma_d^2 s^2)
    h = eq.h(y)
    log_speed = 2.0 * np.log(h) - log_rho - math.log(p.sigma2) - 2.0 * np.log(s)
    return ScaleData(anchor, z, y, s, log_rho, log_speed, eq)


def scale_density(y, anchor: float, eq: EquilibriumFunctions, data: ScaleData | None = None):
    y = np.asarray(y, dtype=float)
    if np.any(~((y > 0.0) & (y < 1.0))):
        raise DomainError("y must lie in (0, 1)")
    if data is None or data.anchor != anchor:
        data = scale_data(eq, anchor)
    return np.exp(data.log_rho_at(y))


def _loglog_slope(x, logv):
    slope, icept = np.polyfit(np.log(x), logv, 1)
    return float(slope), float(icept)


def _window_sel(dist, window):
    return (dist >= window[0] * (1 - 1e-12)) & (dist <= window[1] * (1 + 1e-12))


@dataclass(frozen=True)
class TailFit:
    exponent: float  # integrand ~ C * dist^exponent
    log_c: float


def _fit(data: ScaleData, which: str, at: str, window) -> TailFit:
    dist = data.y if at == "0" else data.s
    sel = _window_sel(dist, window)
    if sel.sum() < 5:
        raise DomainError("fit window is not resolved by the logit grid")
    logv = data.log_rho if which == "rho" else data.log_speed
    slope, icept = _loglog_slope(dist[sel], logv[sel])
    return TailFit(slope, icept)


def boundary_exponents(data: ScaleData, window=FIT_WINDOW):
    """Fitted exponents: ``rho ~ y^-exp0`` at 0, ``rho ~ (1-y)^-exp1`` at 1 and
    the speed-density tail ``(1-y)^-speed_exp1``."""
    exp0 = -_fit(data, "rho", "0", window).exponent
    exp1 = -_fit(data, "rho", "1", window).exponent
    speed_exp0 = _fit(data, "speed", "0", window).exponent
    speed_exp1 = -_fit(data, "speed", "1", window).exponent
    return exp0, exp1, speed_exp0, speed_exp1


def _diverges(exponent: float, guard: float) -> bool:
    """Is ``int_0 dist^-exponent`` infinite?"""
    if abs(exponent - 1.0) <= guard:
        raise InconclusiveTail(f"fitted exponent {exponent:.6g} within {guard} of 1")
    return exponent > 1.0


def scale_limits(anchor: float, eq: EquilibriumFunctions, window=FIT_WINDOW, guard: float = GUARD_BAND,
                 data: ScaleData | None = None):
    """``(s0_diverges, s1_diverges)`` from the power-law exponents of ``rho``."""
    if data is None or data.anchor != anchor:
        data = scale_data(eq, anchor)
    exp0, exp1, _, _ = boundary_exponents(data, window)
    return _diverges(exp0, guard), _diverges(exp1, guard)


def _simpson_total(f, z):
    return float(cumulative_simpson(f, x=z, initial=0.0)[-1])


def _tail_mass(data: ScaleData, at: str) -> float:
    # closed-form integral of C dist^e from 0 to the inner edge of the grid
    fit = _fit(data, "speed", at, TAIL_WINDOW)
    e = fit.exponent
    if e <= -1.0:
        return math.inf
    d0 = float(data.y[0] if at == "0" else data.s[-1])
    return math.exp(fit.log_c) * d0 ** (e + 1.0) / (e + 1.0)


def speed_mass(eq: EquilibriumFunctions, anchor: float = DEFAULT_ANCHOR, window=FIT_WINDOW,
               guard: float = GUARD_BAND, data: ScaleData | None = None) -> float:
    """Total mass of ``1/(rho sigma_Y^2)`` on (0, 1); ``inf`` when the tail at 1 is not integrable."""
    if data is None or data.anchor != anchor:
        data = scale_data(eq, anchor)
    _, _, speed_exp0, speed_exp1 = boundary_exponents(data, window)
    if _diverges(-speed_exp0, guard) or _diverges(speed_exp1, guard):
        return math.inf
    dens_z = np.exp(data.log_speed) * data.y * data.s
    return _simpson_total(dens_z, data.z) + _tail_mass(data, "0") + _tail_mass(data, "1")


def speed_cdf(data: ScaleData):
    """Unnormalised cumulative speed measure ``M(y)``, returned as a callable on [0, 1]."""
    dens_z = np.exp(data.log_speed) * data.y * data.s
    left = _tail_mass(data, "0")
    cum = left + cumulative_simpson(dens_z, x=data.z, initial=0.0)
    total = float(cum[-1]) + _tail_mass(data, "1")
    spline = CubicSpline(data.z, cum)
    fit0 = _fit(data, "speed", "0", TAIL_WINDOW)
    fit1 = _fit(data, "speed", "1", TAIL_WINDOW)
    y_lo, s_lo = float(data.y[0]), float(data.s[-1])

    def cdf(y):
        y = np.atleast_1d(np.asarray(y, dtype=float))
        out = np.empty_like(y)
        inner = (y >= y_lo) & (1.0 - y >= s_lo)
        out[inner] = spline(logit(y[inner]))
        lo = y < y_lo
        e0 = fit0.exponent + 1.0
        out[lo] = math.exp(fit0.log_c) * y[lo] ** e0 / e0
        hi = ~inner & ~lo
        e1 = fit1.exponent + 1.0
        out[hi] = total - math.exp(fit1.log_c) * (1.0 - y[hi]) ** e1 / e1
        return out

    return cdf, total


@dataclass
class SurvivalReport:
    anchor: float
    exp0: float
    exp1: float
    speed_exp0: float
    speed_exp1: float
    s0_diverges: bool | None
    s1_diverges: bool | None
    s0_rate: float
    s1_rate: float
    speed_mass: float
    speed_finite: bool | None
    classification: Classification
    provenance: Provenance
    regime: RegimeTag
    note: str = ""

    def to_dict(self) -> dict:
        d = asdict(self)
        d["classification"] = self.classification.value
        d["provenance"] = self.provenance.value
        d["regime"] = self.regime.value
        d["speed_mass"] = self.speed_mass if math.isfinite(self.speed_mass) else "inf"
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def classify(p, eq: EquilibriumFunctions, anchor: float = DEFAULT_ANCHOR, window=FIT_WINDOW,
             guard: float = GUARD_BAND) -> SurvivalReport:
    data = scale_data(eq, anchor)
    exp0, exp1, speed_exp0, speed_exp1 = boundary_exponents(data, window)
    notes = []

    def decide(e, label):
        try:
            return _diverges(e, guard)
        except InconclusiveTail as exc:
            notes.append(f"{label}: {exc}")
            return None

    s0 = decide(exp0, "scale at 0")
    s1 = decide(exp1, "scale at 1")
    tail1 = decide(speed_exp1, "speed at 1")
    tail0 = decide(-speed_exp0, "speed at 0")
    if tail1 is None or tail0 is None:
        finite, mass = None, math.nan
    elif tail1 or tail0:
        finite, mass = False, math.inf
    else:
        finite, mass = True, speed_mass(eq, anchor, window, guard, data)

    if s0 is True and s1 is True and finite is True:
        cls = Classification.BOTH_SURVIVE
    elif s0 is True and s1 is False:
        cls = Classification.TRADER2_EXTINCT
    else:
        cls = Classification.INDETERMINATE
    regime = survival_regime(p) if p.delta != 0.0 else RegimeTag.UNPROVED_REGION
    proved = regime is RegimeTag.BOTH_SURVIVE_PROVED and cls is Classification.BOTH_SURVIVE
    return SurvivalReport(
        anchor=anchor,
        exp0=exp0,
        exp1=exp1,
        speed_exp0=speed_exp0,
        speed_exp1=speed_exp1,
        s0_diverges=s0,
        s1_diverges=s1,
        s0_rate=exp0 - 1.0,
        s1_rate=exp1 - 1.0,
        speed_mass=mass,
        speed_finite=finite,
        classification=cls,
        provenance=Provenance.PAPER_PROVED if proved else Provenance.NUMERICALLY_INDICATED,
        regime=regime,
        note="; ".join(notes),
    )


# --- log-utility restricted trader -------------------------------------------------


@dataclass
class LogUtilityReport:
    gamma: float
    mu_d: float
    sigma_d: float
    eta: float
    ratio_limit0: float
    ratio_limit1: float
    rho_exp0: float
    rho_exp1: float
    speed_exp1: float
    classification: Classification
    provenance: Provenance

    def to_dict(self) -> dict:
        d = asdict(self)
        d["classification"] = self.classification.value
        d["provenance"] = self.provenance.value
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def log_utility_eta(gamma: float, mu_d: float, sigma_d: float) -> float:
    return (1.0 - gamma) * (2.0 + gamma - 2.0 * mu_d / (sigma_d * sigma_d))


def classify_log_utility(gamma: float, mu_d: float, sigma_d: float, rel_tol: float = 1e-12) -> LogUtilityReport:
    if not (0.0 < gamma < 1.0):
        raise DomainError(f"gamma must lie in (0, 1); got {gamma!r}")
    if not sigma_d > 0.0:
        raise DomainError(f"sigma_d must be > 0; got {sigma_d!r}")
    eta = log_utility_eta(gamma, mu_d, sigma_d)
    s2 = sigma_d * sigma_d
    if math.isclose(eta, 1.0, rel_tol=rel_tol, abs_tol=rel_tol):
        cls, prov = Classification.RECURRENT_INDETERMINATE, Provenance.PAPER_PROVED
    elif eta > 1.0:
        cls, prov = Classification.BOTH_SURVIVE, Provenance.PAPER_PROVED
    else:
        cls, prov = Classification.TRADER2_EXTINCT, Provenance.NUMERICALLY_INDICATED
    return LogUtilityReport(
        gamma=gamma,
        mu_d=mu_d,
        sigma_d=sigma_d,
        eta=eta,
        ratio_limit0=0.5 * (1.0 + gamma),
        ratio_limit1=(1.0 - gamma) * (2.0 * mu_d - (2.0 + gamma) * s2) / (2.0 * s2),
        rho_exp0=1.0 + gamma,
        rho_exp1=eta,
        speed_exp1=2.0 - eta,
        classification=cls,
        provenance=prov,
    )


def log_utility_drift_ratio(y, gamma: float, mu_d: float, sigma_d: float):
    """Two-term model of ``mu_Y / sigma_Y^2`` carrying both boundary expansions."""
    y = np.asarray(y, dtype=float)
    rep = classify_log_utility(gamma, mu_d, sigma_d)
    return rep.ratio_limit0 / y + rep.ratio_limit1 / (1.0 - y)


# --- sweep -------------------------------------------------------------------------

SWEEP_HEADER = ["delta", "gamma", "exp0", "exp1", "s0_div", "s1_div", "speed_mass", "classification", "provenance"]


def sweep_row(p, report: SurvivalReport) -> list:
    def b(v):
        return "" if v is None else str(bool(v)).lower()

    return [
        repr(p.delta),
        repr(p.gamma),
        repr(report.exp0),
        repr(report.exp1),
        b(report.s0_diverges),
        b(report.s1_diverges),
        repr(report.speed_mass),
        report.classification.value,
        report.provenance.value,
    ]


def write_sweep(path, rows, comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        w.writerows(rows)
