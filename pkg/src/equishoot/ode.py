"""The singular, path-dependent ODE for ``h`` and its constant-coefficient
comparison ODE for ``f``.

The path dependence of ``a_2`` (an exponential of a running integral of
``h``) is removed by carrying ``I(y) = int_0^y (h - 1)/(1 - q) dq`` as a
second state component.  ``y = 0`` is a regular singular point, so
integration is launched a small offset ``eps0`` away from it using the
first-order series ``h = gamma + h1 y``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .integrator import StepSizeUnderflow, dopri5

DEFAULT_EPS0 = 1e-8
DEFAULT_EPS1 = 1e-6
EXPLOSION_CEILING = 10.0


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class OdeState:
    y: float
    h: float
    i_log: float


@dataclass(frozen=True)
class CrossedOne:
    y_cross: float
    kind: str = "CrossedOne"


@dataclass(frozen=True)
class ReachedEnd:
    h_end: float
    i_end: float
    kind: str = "ReachedEnd"


@dataclass(frozen=True)
class Exploded:
    y_blow: float
    kind: str = "Exploded"


@dataclass
class SolutionCurve:
    xi: float
    grid: np.ndarray
    h_vals: np.ndarray
    i_vals: np.ndarray
    outcome: CrossedOne | ReachedEnd | Exploded
    tol: float
    eval_y: np.ndarray = field(default_factory=lambda: np.empty(0))
    eval_h: np.ndarray = field(default_factory=lambda: np.empty(0))
    eval_i: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def y_start(self) -> float:
        return float(self.grid[0])

    @property
    def y_end(self) -> float:
        return float(self.grid[-1])

    def to_csv(self, path) -> None:
        write_curve_csv(path, self.grid, self.h_vals, self.i_vals)


def write_curve_csv(path, grid, h_vals, i_vals) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["y", "h", "i_log"])
        for y, h, i in zip(grid, h_vals, i_vals):
            w.writerow([repr(float(y)), repr(float(h)), repr(float(i))])


def read_curve_csv(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0], data[:, 1], data[:, 2]


def _h_prime(y, h, i_log, c, gamma, delta, a_cap):
    # a_0 + a_1 h/(1-y) regrouped so the two 1/y poles cancel analytically
    a2 = c * math.exp(i_log) - a_cap
    return (1.0 + gamma) * (gamma - h) / y + (
        gamma * h + a2 * h * h + delta * y * h * h * (1.0 - h / gamma)
    ) / (1.0 - y)


def rhs(state: OdeState, xi: float, p) -> tuple[float, float]:
    """Right-hand side ``(dh/dy, dI/dy)`` of the augmented system."""
    y = state.y
    if not (0.0 < y < 1.0):
        raise DomainError(f"y must lie in (0, 1); got {y!r}")
    c = xi / p.sigma2
    dh = _h_prime(y, state.h, state.i_log, c, p.gamma, p.delta, p.a_cap)
    di = (state.h - 1.0) / (1.0 - y)
    return dh, di


def rhs_four_term(state: OdeState, xi: float, p) -> float:
    """``dh/dy`` evaluated literally as ``a0 + a1 h/(1-y) + a2 h^2/(1-y) + cubic``."""
    y, h = state.y, state.h
    g, d = p.gamma, p.delta
    a0 = g * (1.0 + g) / y
    a1 = ((2.0 * g + 1.0) * y - (1.0 + g)) / y
    a2 = xi / p.sigma2 * math.exp(state.i_log) - p.a_cap
    return a0 + a1 / (1.0 - y) * h + a2 / (1.0 - y) * h * h + d * y / (1.0 - y) * h * h * (1.0 - h / g)


def series_slope(xi: float, p) -> float:
    """Slope ``h1`` of the launch series ``h = gamma + h1 y`` at the origin."""
    g = p.gamma
    return g * g * (1.0 + xi / p.sigma2 - p.a_cap) / (2.0 + g)


def series_start(xi: float, p, eps0: float = DEFAULT_EPS0) -> OdeState:
    if not (0.0 < eps0 < 1e-2):
        raise DomainError(f"eps0 must be small and positive; got {eps0!r}")
    h1 = series_slope(xi, p)
    return OdeState(eps0, p.gamma + h1 * eps0, (p.gamma - 1.0) * eps0)


def integrate_h(
    xi: float,
    p,
    tol: float = 1e-10,
    y_end: float = 1.0 - DEFAULT_EPS1,
    eps0: float = DEFAULT_EPS0,
    ceiling: float = EXPLOSION_CEILING,
    y_eval=None,
    max_step: float = math.inf,
    y_stops=None,
) -> SolutionCurve:
    """Integrate ``h_xi`` from the series launch to ``y_end``.

    Stops early at the first crossing of ``h = 1`` (``CrossedOne``) or when
    ``|h|`` exceeds ``ceiling`` (``Exploded``).  ``y_eval`` values come from
    the dense output; ``y_stops`` are forced onto the step grid.
    """
    if not (0.0 < y_end < 1.0):
        raise DomainError(f"y_end must lie in (0, 1); got {y_end!r}")
    if not tol > 0.0:
        raise ValueError("tol must be positive")
    start = series_start(xi, p, eps0)
    c = xi / p.sigma2
    g, d, a_cap = p.gamma, p.delta, p.a_cap

    def fun(y, x):
        h, i_log = x
        return [_h_prime(y, h, i_log, c, g, d, a_cap), (h - 1.0) / (1.0 - y)]

    res = dopri5(
        fun,
        start.y,
        [start.h, start.i_log],
        y_end,
        rtol=tol,
        atol=tol * 1e-2,
        first_step=0.5 * eps0,
        event=lambda x: x[0] - 1.0,
        ceiling=ceiling,
        t_eval=y_eval,
        max_step=max_step,
        tstops=y_stops,
    )
    grid = np.asarray(res.ts)
    xs = np.asarray(res.xs)
    if res.status == "event":
        outcome = CrossedOne(res.t_stop)
    elif res.status == "ceiling":
        outcome = Exploded(res.t_stop)
    else:
        outcome = ReachedEnd(res.x_stop[0], res.x_stop[1])
    ev = np.asarray(res.eval_x).reshape(-1, 2)
    return SolutionCurve(
        xi=xi,
        grid=grid,
        h_vals=xs[:, 0],
        i_vals=xs[:, 1],
        outcome=outcome,
        tol=tol,
        eval_y=np.asarray(res.eval_t),
        eval_h=ev[:, 0],
        eval_i=ev[:, 1],
    )


@dataclass
class FCurve:
    a3: float
    grid: np.ndarray
    f_vals: np.ndarray
    f_end: float
    tail_s: np.ndarray
    tail_f: np.ndarray


def f_limit_closed_form(a3: float, gamma: float, delta: float) -> float:
    """Terminal value ``f(1)`` of the comparison ODE."""
    return gamma / (2.0 * delta) * (a3 + delta + math.sqrt((a3 + delta) ** 2 + 4.0 * delta))


def solve_f(
    a3: float,
    p,
    t0: float = 0.0,
    f0: float | None = None,
    tol: float = 1e-12,
    eps0: float = DEFAULT_EPS0,
    s_switch: float = 1e-2,
    t_max: float = 400.0,
) -> FCurve:
    """Integrate the comparison ODE with constant ``a_3`` up to ``y = 1``.

    The approach to ``f(1)`` is a power law ``(1 - y)^k`` whose exponent can
    be small, so no finite cutoff in ``y`` is close enough.  Past
    ``1 - y = s_switch`` the equation is rewritten in ``t = -log(1 - y)``,
    where it becomes asymptotically autonomous and converges like
    ``exp(-k t)``; it is followed out to ``t_max`` without ever forming
    ``1 - y`` in floating point.
    """
    g, d = p.gamma, p.delta
    if f0 is None:
        f0 = g
    if t0 == 0.0:
        if f0 != g:
            raise DomainError("a launch from the origin requires f0 = gamma")
        f1 = g * g * (1.0 + a3) / (2.0 + g)
        y0, x0 = eps0, [g + f1 * eps0]
    else:
        if not (0.0 < t0 < 1.0):
            raise DomainError(f"t0 must lie in [0, 1); got {t0!r}")
        y0, x0 = t0, [f0]

    def fun(y, x):
        f = x[0]
        return [(1.0 + g) * (g - f) / y + (g * f + a3 * f * f + d * y * f * f * (1.0 - f / g)) / (1.0 - y)]

    def fun_t(t, x):
        f = x[0]
        s = math.exp(-t)
        y = 1.0 - s
        return [s * (1.0 + g) * (g - f) / y + g * f + a3 * f * f + d * y * f * f * (1.0 - f / g)]

    y_sw = max(1.0 - s_switch, y0)
    first = dopri5(fun, y0, x0, y_sw, rtol=tol, atol=tol * 1e-2,
                   first_step=0.5 * y0 if t0 == 0.0 else None, ceiling=EXPLOSION_CEILING)
    if first.status != "end":
        raise StepSizeUnderflow(first.t_stop)
    t_sw = -math.log1p(-y_sw)
    tail_t = np.arange(math.ceil(t_sw) + 1.0, t_max + 0.5, 1.0)
    second = dopri5(fun_t, t_sw, [float(first.x_stop[0])], t_max, rtol=tol, atol=tol * 1e-2,
                    t_eval=tail_t, ceiling=EXPLOSION_CEILING)
    if second.status != "end":
        raise StepSizeUnderflow(1.0 - math.exp(-second.t_stop))
    tail_f = np.array([x[0] for x in second.eval_x])
    xs = np.concatenate([np.asarray(first.xs)[:, 0], np.asarray(second.xs)[1:, 0]])
    grid = np.concatenate([np.asarray(first.ts), 1.0 - np.exp(-np.asarray(second.ts)[1:])])
    return FCurve(a3, grid, xs, float(second.x_stop[0]), np.exp(-tail_t), tail_f)
