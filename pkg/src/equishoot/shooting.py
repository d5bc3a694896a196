"""Bisection on the shooting parameter ``xi`` and certification of the
critical solution.

Near ``y = 1`` the critical curve is the stable manifold of a saddle: in the
variable ``t = -log(1 - y)`` the linearised ``(h, F)`` system has one
decaying and one growing mode.  Any error in ``xi`` is therefore amplified
like a power of ``1/(1 - y)`` and the computed curve peels away from the
critical one very close to ``y = 1``.  Two consequences:

* ``xi`` is bisected down to floating-point resolution, and the final curve
  is the one at the last subcritical ``xi`` with the *same* tolerance as the
  bisection (re-integrating with another tolerance moves the numerical
  separatrix);
* terminal values are not read off at ``y_end`` but extrapolated from a fit
  on a window ``1 - y in [s_lo, s_hi]``.  The fit uses the exponents of the
  local expansion ``g(s) = (1 - h)/s`` (integers from the regular part and
  multiples of the decaying-mode exponent ``p``) plus one growing-mode
  term, which soaks up the detachment and is then discarded.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .integrator import IntegrationError
from .ode import (
    DEFAULT_EPS0,
    DEFAULT_EPS1,
    OdeState,
    SolutionCurve,
    integrate_h,
    rhs,
)

DEFAULT_XI_TOL = 1e-15
DEFAULT_ODE_TOL = 1e-12
FIT_WINDOW = (1e-5, 2e-2)
FIT_POINTS = 200


class ShootingError(RuntimeError):
    code = "ShootingError"


class BracketFailure(ShootingError):
    code = "BracketFailure"


class ToleranceFailure(ShootingError):
    code = "ToleranceFailure"


class Indeterminate(ShootingError):
    code = "Indeterminate"


class XiClass(str, Enum):
    SUBCRITICAL = "Subcritical"
    SUPERCRITICAL = "Supercritical"


def _classify_curve(curve: SolutionCurve, margin: float) -> XiClass:
    kind = curve.outcome.kind
    if kind in ("CrossedOne", "Exploded"):
        return XiClass.SUPERCRITICAL
    if curve.outcome.h_end < 1.0 - margin:
        return XiClass.SUBCRITICAL
    raise Indeterminate(
        f"xi={curve.xi!r}: h(y_end)={curve.outcome.h_end!r} within {margin:g} of 1"
    )


def classify_xi(
    xi: float,
    p,
    tol: float = DEFAULT_ODE_TOL,
    margin: float | None = None,
    y_end: float = 1.0 - DEFAULT_EPS1,
    eps0: float = DEFAULT_EPS0,
) -> XiClass:
    """Supercritical iff ``h_xi`` reaches one (or explodes) before ``y_end``."""
    if not xi > 0.0:
        raise ValueError(f"xi must be positive; got {xi!r}")
    if margin is None:
        margin = 10.0 * tol
    return _classify_curve(integrate_h(xi, p, tol, y_end=y_end, eps0=eps0), margin)


def _terminal_modes(p) -> tuple[float, float]:
    # eigenvalues of the (h, F) linearisation at (1, F*) in t = -log(1 - y)
    lam = -p.gamma - p.delta / p.gamma
    root = math.sqrt(lam * lam + 4.0 * p.f_star)
    return 0.5 * (lam - root), 0.5 * (lam + root)


def decay_exponent(p) -> float:
    """Exponent ``p`` of the decaying mode of ``g(s)`` at ``y = 1``.

    Positive exactly on the admissible region ``A > 1 + delta - 2 delta/gamma``.
    """
    return -_terminal_modes(p)[0] - 1.0


def growth_exponent(p) -> float:
    """(Negative) exponent of the growing mode of ``g(s)``; detached curves carry it."""
    return -_terminal_modes(p)[1] - 1.0


def _exponents(p_exp: float, max_power: float = 2.0) -> list[float]:
    cands = [0.0, 1.0, 2.0]
    for m in range(1, 4):
        for k in range(0, 3):
            cands.append(m * p_exp + k)
    out: list[float] = []
    for e in sorted(cands):
        if e <= max_power + 1e-12 and all(abs(e - o) > 0.05 for o in out):
            out.append(e)
    return out


@dataclass
class TerminalFit:
    """Separatrix model ``g(s) = sum c_k s^e_k`` for ``s = 1 - y`` near zero.

    The fit also carries a growing-mode term ``c_q s^q`` that absorbs the
    slow detachment of the computed curve; it is excluded from every
    evaluation below.
    """

    exponents: list
    coeffs: list
    grow_exponent: float
    grow_coeff: float
    s_lo: float
    s_hi: float
    s_join: float
    i_one: float
    rms: float

    def g(self, s):
        s = np.asarray(s, dtype=float)
        return sum(c * s**e for c, e in zip(self.coeffs, self.exponents))

    def h(self, s):
        s = np.asarray(s, dtype=float)
        return 1.0 - s * self.g(s)

    def i_log(self, s):
        s = np.asarray(s, dtype=float)
        return self.i_one + sum(c * s ** (e + 1.0) / (e + 1.0) for c, e in zip(self.coeffs, self.exponents))

    @property
    def slope(self) -> float:
        return float(self.coeffs[0])


def _lstsq(s, v, exps):
    # column scaling keeps the least-squares problem tame when exponents differ a lot
    m = np.column_stack([s**e for e in exps])
    scale = np.abs(m).max(axis=0)
    coef, *_ = np.linalg.lstsq(m / scale, v, rcond=None)
    coef = coef / scale
    return coef, float(np.sqrt(np.mean((m @ coef - v) ** 2)))


def fit_terminal(curve: SolutionCurve, p, window=FIT_WINDOW, join_tol: float = 1e-13):
    """Fit the terminal expansion on ``curve.eval_*`` samples inside ``window``.

    Returns the fit and the free-intercept estimate of ``h(1)``, so that
    ``h(1) = 1`` is checked rather than imposed.
    """
    s = 1.0 - curve.eval_y
    sel = (s >= window[0] * (1 - 1e-9)) & (s <= window[1] * (1 + 1e-9))
    if sel.sum() < 20:
        raise ToleranceFailure("too few samples in the terminal fit window")
    s, h, i_log = s[sel], curve.eval_h[sel], curve.eval_i[sel]
    exps = _exponents(decay_exponent(p))
    q = growth_exponent(p)
    coef, rms = _lstsq(s, (1.0 - h) / s, [q] + exps)
    grow, reg = float(coef[0]), [float(c) for c in coef[1:]]

    shifted = [0.0] + [e + 1.0 for e in exps] + [q + 1.0]
    h_coef, _ = _lstsq(s, h, shifted)
    i_coef, _ = _lstsq(s, i_log, shifted)

    # below s_join the growing mode is visible in h; use the model there
    s_sorted = np.sort(s)
    visible = np.abs(grow) * s_sorted ** (q + 1.0) > join_tol
    s_join = float(s_sorted[~visible][0]) if (~visible).any() else float(window[1])
    fit = TerminalFit(list(exps), reg, q, grow, window[0], window[1], s_join, float(i_coef[0]), rms)
    return fit, float(h_coef[0])


@dataclass
class CriticalSolution:
    xi0: float
    xi_hi: float
    curve: SolutionCurve
    fit: TerminalFit
    h_end: float
    slope_end: float
    identity_lhs: float
    identity_rhs: float
    identity_residual: float
    bracket_width: float
    iterations: int
    params: object = field(repr=False, default=None)

    def retained(self):
        """Solver nodes where the curve is still attached to the separatrix."""
        s = 1.0 - self.curve.grid
        keep = s >= self.fit.s_join
        return self.curve.grid[keep], self.curve.h_vals[keep], self.curve.i_vals[keep]

    def extended(self, n_tail: int = 60, s_min: float = 1e-14):
        """Retained nodes followed by the fitted terminal expansion down to ``s_min``."""
        y, h, i = self.retained()
        s_tail = np.geomspace(self.fit.s_join, s_min, n_tail + 1)[1:]
        return (
            np.concatenate([y, 1.0 - s_tail]),
            np.concatenate([h, self.fit.h(s_tail)]),
            np.concatenate([i, self.fit.i_log(s_tail)]),
        )


def find_xi0(
    p,
    xi_tol: float = DEFAULT_XI_TOL,
    ode_tol: float = DEFAULT_ODE_TOL,
    eps0: float = DEFAULT_EPS0,
    eps1: float = DEFAULT_EPS1,
    margin: float | None = None,
    xi_ceiling_factor: float = 1e6,
    window=FIT_WINDOW,
) -> CriticalSolution:
    """Locate ``xi0 = sup Xi`` by bisection and extrapolate terminal values."""
    if margin is None:
        margin = 10.0 * ode_tol
    y_end = 1.0 - eps1

    def run(xi, y_eval=None):
        return integrate_h(xi, p, ode_tol, y_end=y_end, eps0=eps0, y_eval=y_eval)

    seed = p.xi_seed_bound
    lo = seed * (1.0 - 1e-3)
    lo_curve = None
    for _ in range(60):
        try:
            c = run(lo)
            if _classify_curve(c, margin) is XiClass.SUBCRITICAL:
                lo_curve = c
                break
        except (Indeterminate, IntegrationError):
            pass
        lo *= 0.5
    if lo_curve is None:
        raise BracketFailure("no subcritical xi found below the seed bound")

    hi = 2.0 * lo
    while True:
        if hi > xi_ceiling_factor * seed:
            raise BracketFailure(f"no supercritical xi found below {xi_ceiling_factor * seed!r}")
        try:
            if _classify_curve(run(hi), margin) is XiClass.SUPERCRITICAL:
                break
            lo = hi
        except Indeterminate:
            pass
        hi *= 2.0

    it = 0
    while hi - lo > xi_tol * hi:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        it += 1
        try:
            cls = _classify_curve(run(mid), margin)
        except Indeterminate:
            half = 0.5 * xi_tol * mid
            try:
                left = _classify_curve(run(mid - half), margin)
                right = _classify_curve(run(mid + half), margin)
            except Indeterminate as exc:
                raise ToleranceFailure("indeterminate region wider than xi_tol") from exc
            if left is XiClass.SUBCRITICAL and right is XiClass.SUPERCRITICAL:
                lo, hi = mid - half, mid + half
                break
            raise ToleranceFailure("non-monotone classification around the critical xi")
        if cls is XiClass.SUPERCRITICAL:
            hi = mid
        else:
            lo = mid

    s_eval = np.geomspace(window[1], window[0], FIT_POINTS)
    curve = run(lo, y_eval=1.0 - s_eval)
    fit, h_end = fit_terminal(curve, p, window)
    lhs = math.exp(fit.i_one)
    rhs_ = p.sigma2 / lo * p.f_star
    return CriticalSolution(
        xi0=lo,
        xi_hi=hi,
        curve=curve,
        fit=fit,
        h_end=h_end,
        slope_end=fit.slope,
        identity_lhs=lhs,
        identity_rhs=rhs_,
        identity_residual=abs(lhs - rhs_) / abs(rhs_),
        bracket_width=hi - lo,
        iterations=it,
        params=p,
    )


def ode_residual(cs: CriticalSolution, p, n_centers: int = 120) -> float:
    """Max relative mismatch between centred differences of ``h`` and the ODE.

    Five-point stencils are forced onto the step grid of a re-run of the
    critical curve, so the differences see RK nodes rather than interpolated
    values.  Stencil spacing shrinks with the distance to either endpoint,
    where the derivatives of ``h`` grow.
    """
    # closer to one the stencil shrinks until rounding dominates the difference
    y_top = 0.995
    centers = np.linspace(0.01, y_top, n_centers)
    spacing = np.minimum.reduce([np.full(n_centers, 2.5e-4), 0.0025 * (1.0 - centers), 0.025 * centers])
    offs = np.array([-2.0, -1.0, 0.0, 1.0, 2.0])
    pts = centers[:, None] + spacing[:, None] * offs[None, :]
    c = integrate_h(cs.xi0, p, cs.curve.tol, y_end=cs.curve.y_end, y_stops=pts.ravel())
    index = {float(y): k for k, y in enumerate(c.grid)}
    worst = 0.0
    for row, d in zip(pts, spacing):
        ks = [index[float(y)] for y in row]
        hv = c.h_vals[ks]
        fd = (hv[0] - 8.0 * hv[1] + 8.0 * hv[3] - hv[4]) / (12.0 * d)
        k = ks[2]
        dh, _ = rhs(OdeState(float(c.grid[k]), float(hv[2]), float(c.i_vals[k])), cs.xi0, p)
        worst = max(worst, abs(fd - dh) / max(1.0, abs(dh)))
    return float(worst)


@dataclass
class CertificateReport:
    xi0: float
    h_end: float
    slope_end: float
    slope_closed_form: float
    identity_lhs: float
    identity_rhs: float
    residuals: dict
    checks: dict
    passed: bool

    def to_dict(self) -> dict:
        return {
            "xi0": self.xi0,
            "h_end": self.h_end,
            "slope_end": self.slope_end,
            "slope_closed_form": self.slope_closed_form,
            "identity_lhs": self.identity_lhs,
            "identity_rhs": self.identity_rhs,
            "residuals": self.residuals,
            "checks": self.checks,
            "passed": self.passed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


H_END_TOL = 1e-6
SLOPE_RTOL = 1e-4
IDENTITY_RTOL = 1e-4
BOUND_TOL = 1e-8


def certify(cs: CriticalSolution, p, residual: float | None = None) -> CertificateReport:
    closed = p.slope_closed_form
    h = cs.curve.h_vals
    if residual is None:
        residual = ode_residual(cs, p)
    res = {
        "h_end": abs(cs.h_end - 1.0),
        "slope_rel": abs(cs.slope_end - closed) / abs(closed),
        "identity_rel": cs.identity_residual,
        "h_min_below_gamma": max(0.0, p.gamma - float(h.min())),
        "h_max_above_one": max(0.0, float(h.max()) - 1.0),
        "ode_residual": residual,
    }
    checks = {
        "h_end": res["h_end"] <= H_END_TOL,
        "slope": res["slope_rel"] <= SLOPE_RTOL,
        "identity": res["identity_rel"] <= IDENTITY_RTOL,
        "bounds": res["h_min_below_gamma"] <= BOUND_TOL and res["h_max_above_one"] <= BOUND_TOL,
        "ode_residual": residual <= 10.0 * cs.curve.tol,
    }
    return CertificateReport(
        xi0=cs.xi0,
        h_end=cs.h_end,
        slope_end=cs.slope_end,
        slope_closed_form=closed,
        identity_lhs=cs.identity_lhs,
        identity_rhs=cs.identity_rhs,
        residuals=res,
        checks=checks,
        passed=all(checks.values()),
    )
