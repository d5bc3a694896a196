"""Economic primitives and the derived ODE constants ``delta`` and ``A``.

Validation is strict: parameters outside the existence region are rejected,
because everything downstream (a finite critical shooting parameter, the
bounds ``gamma <= h <= 1``) relies on them.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from enum import Enum


class ValidationError(ValueError):
    """Raised when raw parameters fall outside the admissible region."""

    code = "ValidationError"


class GammaOutOfRange(ValidationError):
    code = "GammaOutOfRange"


class DeltaOutOfRange(ValidationError):
    code = "DeltaOutOfRange"


class ACapTooSmall(ValidationError):
    code = "ACapTooSmall"


class NonpositiveSigma(ValidationError):
    code = "NonpositiveSigma"


class NonpositiveLevel(ValidationError):
    code = "NonpositiveLevel"


@dataclass(frozen=True)
class RawParams:
    gamma: float
    sigma_d: float
    mu_d: float
    beta1: float
    beta2: float
    d0: float = 1.0
    theta2: float = 1.0


@dataclass(frozen=True)
class ModelParams:
    gamma: float
    sigma_d: float
    mu_d: float
    beta1: float
    beta2: float
    d0: float
    theta2: float
    delta: float
    a_cap: float

    @property
    def sigma2(self) -> float:
        return self.sigma_d * self.sigma_d

    @property
    def a_threshold(self) -> float:
        """Lower bound ``1 + delta - 2 delta / gamma`` that ``a_cap`` must exceed."""
        return 1.0 + self.delta - 2.0 * self.delta / self.gamma

    @property
    def f_star(self) -> float:
        """Limit of ``F_xi0(y)`` at ``y = 1``: ``A - gamma + delta (1 - gamma) / gamma``."""
        g = self.gamma
        return self.a_cap - g + self.delta * (1.0 - g) / g

    @property
    def slope_closed_form(self) -> float:
        """Terminal slope ``h'(1)`` of the critical solution."""
        g, d = self.gamma, self.delta
        return (1.0 - g) * (g * g + g - d) / (g * (self.a_cap - d - 1.0) + 2.0 * d)

    @property
    def xi_seed_bound(self) -> float:
        """Every ``xi`` in ``(0, this)`` yields a global solution below one."""
        return self.f_star * self.sigma2

    def to_dict(self) -> dict:
        return asdict(self)


def compute_delta(beta1: float, beta2: float, sigma_d: float) -> float:
    return 2.0 * (beta2 - beta1) / (sigma_d * sigma_d)


def compute_a_cap(gamma: float, sigma_d: float, mu_d: float, beta2: float) -> float:
    s2 = sigma_d * sigma_d
    return (2.0 * beta2 + s2 - (1.0 - gamma) * (2.0 * mu_d - gamma * s2)) / s2


def derive_params(raw: RawParams, allow_degenerate: bool = False) -> ModelParams:
    """Validate ``raw`` and attach ``delta`` and ``A``.

    ``allow_degenerate=True`` admits ``delta = 0`` (equal time preferences),
    which is outside the existence region handled here but is the classical
    regression case; it then only requires ``A > 1``.
    """
    g = raw.gamma
    if not (0.0 < g < 1.0):
        raise GammaOutOfRange(f"gamma must lie in (0, 1); got gamma={g!r}")
    if not raw.sigma_d > 0.0:
        raise NonpositiveSigma(f"sigma_d must be > 0; got sigma_d={raw.sigma_d!r}")
    if not raw.d0 > 0.0:
        raise NonpositiveLevel(f"d0 must be > 0; got d0={raw.d0!r}")
    if not raw.theta2 > 0.0:
        raise NonpositiveLevel(f"theta2 must be > 0; got theta2={raw.theta2!r}")

    delta = compute_delta(raw.beta1, raw.beta2, raw.sigma_d)
    a_cap = compute_a_cap(g, raw.sigma_d, raw.mu_d, raw.beta2)

    degenerate_ok = allow_degenerate and delta == 0.0
    if not (-g < delta < 0.0) and not degenerate_ok:
        raise DeltaOutOfRange(
            f"delta = 2(beta2 - beta1)/sigma_d^2 must lie in (-gamma, 0) = ({-g!r}, 0); "
            f"got delta={delta!r} (beta1={raw.beta1!r}, beta2={raw.beta2!r}, "
            f"sigma_d={raw.sigma_d!r})"
        )
    threshold = 1.0 + delta - 2.0 * delta / g
    if not a_cap > threshold:
        raise ACapTooSmall(
            f"A must exceed 1 + delta - 2 delta/gamma = {threshold!r}; got A={a_cap!r}"
        )

    p = ModelParams(
        gamma=g,
        sigma_d=raw.sigma_d,
        mu_d=raw.mu_d,
        beta1=raw.beta1,
        beta2=raw.beta2,
        d0=raw.d0,
        theta2=raw.theta2,
        delta=delta,
        a_cap=a_cap,
    )
    assert g * (a_cap - delta - 1.0) + 2.0 * delta > 0.0
    return p


def params_from_delta(
    gamma: float,
    delta: float,
    a_cap: float,
    sigma_d: float = 0.2,
    beta2: float = 0.05,
    d0: float = 1.0,
    theta2: float = 1.0,
    allow_degenerate: bool = False,
) -> ModelParams:
    """Back out ``beta1`` and ``mu_d`` that realise a target ``(delta, A)`` pair."""
    s2 = sigma_d * sigma_d
    beta1 = beta2 - 0.5 * delta * s2
    # invert the A formula for mu_d
    mu_d = 0.5 * ((2.0 * beta2 + s2 - a_cap * s2) / (1.0 - gamma) + gamma * s2)
    raw = RawParams(gamma, sigma_d, mu_d, beta1, beta2, d0, theta2)
    return derive_params(raw, allow_degenerate=allow_degenerate)


class RegimeTag(str, Enum):
    BOTH_SURVIVE_PROVED = "BothSurviveProved"
    UNPROVED_REGION = "UnprovedRegion"


# delta built from beta1, beta2 and sigma_d carries a few ulps of rounding, so
# values this close to the endpoint -gamma^2 count as the endpoint itself
ENDPOINT_RTOL = 1e-12


def survival_regime(p: ModelParams) -> RegimeTag:
    edge = -p.gamma * p.gamma
    if abs(p.delta - edge) <= ENDPOINT_RTOL * abs(edge):
        return RegimeTag.UNPROVED_REGION
    if -p.gamma < p.delta < edge:
        return RegimeTag.BOTH_SURVIVE_PROVED
    return RegimeTag.UNPROVED_REGION


REFERENCE_RAW = RawParams(gamma=0.5, sigma_d=0.2, mu_d=0.01, beta1=0.056, beta2=0.05)

