"""Dormand-Prince 5(4) stepping with a PI step-size controller.

Small systems only (the state is a plain list of floats); this keeps a step
at a few dozen microseconds, which matters because shooting re-integrates
the same system fifty-odd times.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from scipy.integrate import RK45

_A = [list(map(float, row)) for row in RK45.A]
_B = list(map(float, RK45.B))
_C = list(map(float, RK45.C))
_E = list(map(float, RK45.E))
_P = [list(map(float, row)) for row in RK45.P]

SAFETY = 0.9
# PI controller exponents (Hairer/Gustafsson, order 5 pair)
BETA = 0.04
ALPHA = 0.2 - 0.75 * BETA
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0


class IntegrationError(RuntimeError):
    pass


class StepSizeUnderflow(IntegrationError):
    def __init__(self, t: float):
        super().__init__(f"step size underflow at t={t!r}")
        self.t = t


@dataclass
class IntegrationResult:
    ts: list
    xs: list
    status: str  # "end", "event" or "ceiling"
    t_stop: float
    x_stop: list
    n_steps: int = 0
    n_rejected: int = 0
    eval_t: list = field(default_factory=list)
    eval_x: list = field(default_factory=list)


def _dense(x, q, h, theta):
    # x(t + theta h) from the 4th-order continuous extension
    out = []
    for i in range(len(x)):
        qi = q[i]
        out.append(x[i] + h * theta * (qi[0] + theta * (qi[1] + theta * (qi[2] + theta * qi[3]))))
    return out


def dopri5(
    fun,
    t0: float,
    x0,
    t_end: float,
    rtol: float,
    atol: float,
    *,
    first_step: float | None = None,
    max_step: float = math.inf,
    event=None,
    ceiling: float | None = None,
    t_eval=None,
    max_steps: int = 1_000_000,
    record: bool = True,
    tstops=None,
):
    """Integrate ``x' = fun(t, x)`` from ``t0`` towards ``t_end > t0``.

    ``event(x)`` is a scalar monitor; integration stops at the first upward
    zero crossing, located by bisection on the dense output.  ``ceiling``
    stops integration once ``abs(x[0])`` exceeds it.  Points in ``tstops``
    become step endpoints, so values there are genuine RK nodes rather than
    interpolants.
    """
    n = len(x0)
    t = float(t0)
    x = [float(v) for v in x0]
    k1 = fun(t, x)
    span = t_end - t0
    if span <= 0:
        raise ValueError("t_end must exceed t0")

    if first_step is None:
        d0 = math.sqrt(sum((x[i] / (atol + rtol * abs(x[i]))) ** 2 for i in range(n)) / n)
        d1 = math.sqrt(sum((k1[i] / (atol + rtol * abs(x[i]))) ** 2 for i in range(n)) / n)
        h = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
        h = min(h, span, max_step)
    else:
        h = min(first_step, span, max_step)

    evals = sorted(float(v) for v in t_eval) if t_eval is not None else []
    ei = 0
    while ei < len(evals) and evals[ei] < t:
        ei += 1
    eval_t: list = []
    eval_x: list = []

    stops = sorted(float(v) for v in tstops if t < v < t_end) if tstops is not None else []
    si = 0

    ts = [t] if record else []
    xs = [list(x)] if record else []
    g_prev = event(x) if event is not None else None
    err_old = 1e-4
    n_steps = n_rej = 0
    rejected_last = False
    a, b, c, e, p = _A, _B, _C, _E, _P

    while t < t_end:
        if n_steps >= max_steps:
            raise IntegrationError(f"max_steps exceeded at t={t!r}")
        if h < 1e-15 * max(1.0, abs(t)):
            raise StepSizeUnderflow(t)
        last = False
        target = t_end
        if si < len(stops):
            target = stops[si]
        h_try = h
        if t + h >= target:
            h = target - t
            last = True

        k = [k1]
        t_new = target if last else t + h
        try:
            for s in range(1, 6):
                row = a[s]
                xt = [x[i] + h * sum(row[j] * k[j][i] for j in range(s)) for i in range(n)]
                k.append(fun(t + c[s] * h, xt))
            x_new = [x[i] + h * sum(b[j] * k[j][i] for j in range(6)) for i in range(n)]
            k7 = fun(t_new, x_new)
            k.append(k7)
        except OverflowError:
            # a stage wandered far enough to overflow; treat like a huge error
            k = None

        acc = 0.0
        finite = k is not None
        for i in range(n if finite else 0):
            err_i = h * sum(e[j] * k[j][i] for j in range(7))
            sc = atol + rtol * max(abs(x[i]), abs(x_new[i]))
            r = err_i / sc
            if not math.isfinite(r):
                finite = False
                break
            acc += r * r
        err = math.sqrt(acc / n) if finite else math.inf

        if err > 1.0:
            n_rej += 1
            if math.isfinite(err):
                fac = max(MIN_FACTOR, SAFETY * err ** (-ALPHA))
            else:
                fac = MIN_FACTOR
            h *= fac
            rejected_last = True
            continue

        # accepted
        n_steps += 1
        q = [[sum(k[j][i] * p[j][m] for j in range(7)) for m in range(4)] for i in range(n)]

        while ei < len(evals) and evals[ei] <= t_new:
            theta = (evals[ei] - t) / h
            eval_t.append(evals[ei])
            eval_x.append(_dense(x, q, h, theta))
            ei += 1

        if event is not None:
            g_new = event(x_new)
            if g_prev < 0.0 <= g_new:
                lo, hi = 0.0, 1.0
                for _ in range(60):
                    mid = 0.5 * (lo + hi)
                    if event(_dense(x, q, h, mid)) >= 0.0:
                        hi = mid
                    else:
                        lo = mid
                    if (hi - lo) * h <= 1e-15 * max(1.0, abs(t)):
                        break
                t_ev = t + hi * h
                x_ev = _dense(x, q, h, hi)
                if record:
                    ts.append(t_ev)
                    xs.append(x_ev)
                return IntegrationResult(ts, xs, "event", t_ev, x_ev, n_steps, n_rej, eval_t, eval_x)
            g_prev = g_new

        t, x, k1 = t_new, x_new, k7
        if last and si < len(stops):
            si += 1
        if record:
            ts.append(t)
            xs.append(list(x))

        if ceiling is not None and abs(x[0]) > ceiling:
            return IntegrationResult(ts, xs, "ceiling", t, x, n_steps, n_rej, eval_t, eval_x)

        fac = SAFETY * max(err, 1e-10) ** (-ALPHA) * err_old ** BETA
        fac = min(MAX_FACTOR, max(MIN_FACTOR, fac))
        if rejected_last:
            fac = min(fac, 1.0)
        err_old = max(err, 1e-4)
        rejected_last = False
        # a step shortened to land on a stop does not shrink the next one
        h = min(max(h * fac, h_try) if last else h * fac, max_step)

    return IntegrationResult(ts, xs, "end", t, x, n_steps, n_rej, eval_t, eval_x)
