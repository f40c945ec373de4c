"""Minimum-rate sensing and control for linear-Gaussian plants under an LQG budget."""

from .errors import (InfeasibleBudgetError, PlantFileError, PlantValidationError,
                     RateLQGError, SolverError)
from .model import (BudgetSpec, PartiallyObservedPlant, StationaryPlant, TimeVaryingPlant,
                    example_plant, load_plant, save_plant, validate)
from .riccati import RiccatiBundle, backward_riccati, lyapunov_stationary, solve_are
from .synthesis import (SynthesisDesign, TradeoffCurve, data_rate_asymptote,
                        operational_bounds, synthesize, synthesize_po,
                        synthesize_stationary, synthesize_tv, tradeoff_curve)

__version__ = "0.1.0"
