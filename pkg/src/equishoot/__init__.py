"""Shooting solver, equilibrium functions, survival diagnostics and simulation
for a two-trader limited-participation economy."""

from .equilibrium import EquilibriumFunctions, build_equilibrium
from .ode import SolutionCurve, integrate_h, series_start, solve_f
from .params import ModelParams, RawParams, derive_params, params_from_delta, survival_regime
from .shooting import CriticalSolution, certify, find_xi0
from .survival import SurvivalReport, classify, classify_log_utility

__all__ = [
    "CriticalSolution",
    "EquilibriumFunctions",
    "ModelParams",
    "RawParams",
    "SolutionCurve",
    "SurvivalReport",
    "build_equilibrium",
    "certify",
    "classify",
    "derive_params",
    "find_xi0",
    "integrate_h",
    "params_from_delta",
    "classify_log_utility",
    "series_start",
    "solve_f",
    "survival_regime",
]
