"""Exception types shared across the package."""


class RateLQGError(Exception):
    """Base class for all package errors."""


class PlantValidationError(RateLQGError, ValueError):
    """Plant data violates a structural or definiteness requirement."""

    def __init__(self, issues):
        if isinstance(issues, str):
            issues = [issues]
        self.issues = list(issues)
        super().__init__("; ".join(self.issues))


class PlantFileError(RateLQGError, ValueError):
    """A plant file could not be parsed or does not follow the schema."""


class InfeasibleBudgetError(RateLQGError):
    """The LQG budget cannot be met by any policy.

    ``floor`` is the cost attained with perfect state information; any
    budget at or below it is infeasible.
    """

    def __init__(self, budget, floor, message=None):
        self.budget = float(budget)
        self.floor = float(floor)
        if message is None:
            message = (f"budget D={self.budget:.6g} is infeasible: it must exceed "
                       f"the perfect-information cost floor {self.floor:.6g}")
        super().__init__(message)


class SolverError(RateLQGError, RuntimeError):
    """The max-det solver failed to produce a certified solution."""
