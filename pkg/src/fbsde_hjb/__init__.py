"""Stochastic HJB toolkit for optimal control of forward-backward SDEs with jumps."""
from .benchmarks import (MarketParams, build_merton, build_riskmin, default_grid,
                         merton_log_value, riskmin_closed_form)
from .config import build_problem, load_problem
from .driver import Branch, DriverContext, eval_driver, ito_ventzell_residual, maximize_driver
from .errors import (ConfigError, FBSDEError, InvalidProblemError, NonFiniteError,
                     UnstableStepError)
from .field import DecouplingField, estimate_derivatives, eval_field, lift_K, lift_Z
from .model import (ControlSet, CoefficientSet, JumpMeasure, ProblemSpec, SpaceTimeGrid,
                    levy_integral, validate_problem)
from .montecarlo import (PathBundle, bsde_residual, girsanov_entropy, reconstruct_backward,
                         simulate_forward)
from .solver import (check_comparison_hypotheses, classical_hjb_crosscheck, solve,
                     verify_comparison)

__all__ = [
    "Branch", "CoefficientSet", "ConfigError", "ControlSet", "DecouplingField", "DriverContext",
    "FBSDEError", "InvalidProblemError", "JumpMeasure", "MarketParams", "NonFiniteError",
    "PathBundle", "ProblemSpec", "SpaceTimeGrid", "UnstableStepError", "bsde_residual",
    "build_merton", "build_problem", "build_riskmin", "check_comparison_hypotheses",
    "classical_hjb_crosscheck", "default_grid", "estimate_derivatives", "eval_driver",
    "eval_field", "girsanov_entropy", "ito_ventzell_residual", "levy_integral", "lift_K",
    "lift_Z", "load_problem", "maximize_driver", "merton_log_value", "reconstruct_backward",
    "riskmin_closed_form", "simulate_forward", "solve", "validate_problem", "verify_comparison",
]
