"""Path-following barrier method for max-det problems.

Centering minimizes ``t*(c'x - sum_j w_j log det G_j) - sum_k log det F_k``
by damped Newton steps; ``t`` then grows by ``settings.growth``.  The
returned point is strictly feasible and suboptimal by at most
``theta / t`` where ``theta`` is the summed dimension of the LMI blocks.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .problem import AffineExpr, MaxDetProblem

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
NUMERICAL_FAILURE = "numerical_failure"


@dataclass(frozen=True)
class SolverSettings:
    tolerance: float = 1e-8
    growth: float = 10.0
    max_newton: int = 100
    backtrack: float = 0.5
    armijo: float = 0.01
    phase1_margin: float = 1e-6
    t0: float = 1.0
    max_outer: int = 200

    def __post_init__(self):
        for name in ("tolerance", "max_newton", "backtrack", "armijo",
                     "phase1_margin", "t0"):
            if not getattr(self, name) > 0:
                raise ValueError(f"solver setting {name} must be positive")
        if not self.growth > 1:
            raise ValueError("barrier growth factor must exceed 1")
        if not self.backtrack < 1 or not self.armijo < 0.5:
            raise ValueError("line search needs backtrack < 1 and armijo < 0.5")


@dataclass
class MaxDetSolution:
    status: str
    values: dict = field(default_factory=dict)
    x: np.ndarray | None = None
    objective_nats: float = np.nan
    iterations: int = 0
    gap_estimate: float = np.inf
    min_constraint_eig: float = np.nan
    phase1_value: float | None = None
    message: str = ""

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL

    @property
    def objective_bits(self) -> float:
        return self.objective_nats / np.log(2.0)


# A term contributes a(t) * (-log det F(x)) to the centering function, with
# a(t) = t * weight + barrier.
@dataclass
class _Term:
    expr: AffineExpr
    weight: float
    barrier: float


_ROUNDOFF = 1e3 * np.finfo(float).eps


class _Stagnation(Exception):
    pass


def _value(terms, c, x, t):
    f = t * float(c @ x)
    for term in terms:
        try:
            L = np.linalg.cholesky(term.expr(x))
        except np.linalg.LinAlgError:
            return np.inf
        f -= (t * term.weight + term.barrier) * 2.0 * np.log(np.diag(L)).sum()
    return f


def _derivatives(terms, c, x, t):
    n = len(x)
    g = t * c.copy()
    H = np.zeros((n, n))
    for term in terms:
        a = t * term.weight + term.barrier
        if a == 0.0 or len(term.expr.idx) == 0:
            continue
        L = np.linalg.cholesky(term.expr(x))
        Linv = scipy.linalg.solve_triangular(L, np.eye(L.shape[0]), lower=True)
        # M_i = L^-1 F_i L^-T, so tr(F^-1 F_i) = tr(M_i) and
        # tr(F^-1 F_i F^-1 F_j) = <M_i, M_j>.
        M = Linv @ term.expr.coeffs @ Linv.T
        idx = term.expr.idx
        g[idx] -= a * np.trace(M, axis1=1, axis2=2)
        flat = M.reshape(len(idx), -1)
        H[np.ix_(idx, idx)] += a * (flat @ flat.T)
    return g, H


def _newton_direction(g, H):
    # Jacobi scaling keeps the factorization stable when t is large.
    d = np.sqrt(np.maximum(np.diag(H), 1e-300))
    return _scaled_direction(g / d, H / np.outer(d, d)) / d


def _scaled_direction(g, H):
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            return scipy.linalg.solve(H, -g, assume_a="pos")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        pass
    reg = 1e-12 * max(1.0, np.abs(np.diag(H)).max(initial=1.0))
    try:
        return scipy.linalg.solve(H + reg * np.eye(len(g)), -g, assume_a="pos")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        return np.linalg.lstsq(H, -g, rcond=None)[0]


def _center(terms, c, x, t, settings, stop=None):
    """Damped Newton centering; returns (x, newton steps taken)."""
    f = _value(terms, c, x, t)
    for k in range(settings.max_newton):
        g, H = _derivatives(terms, c, x, t)
        dx = _newton_direction(g, H)
        decrement = float(-g @ dx)
        # Roundoff in f grows with t; below this floor Newton makes no progress.
        if decrement / 2.0 <= max(1e-10, _ROUNDOFF * max(1.0, abs(f))):
            return x, k
        step = 1.0
        while True:
            x_new = x + step * dx
            f_new = _value(terms, c, x_new, t)
            # Strict decrease guards against accepting steps lost to roundoff.
            if f_new < f and f_new <= f - settings.armijo * step * decrement:
                break
            step *= settings.backtrack
            if step < 1e-14:
                # Armijo cannot resolve progress below roundoff in f.
                if decrement < 1e-6 * max(1.0, abs(f)) ** 0.5:
                    return x, k
                # Fall back on the damped step, which decreases any
                # self-concordant function without needing f to resolve it.
                x_new = x + dx / (1.0 + np.sqrt(decrement))
                f_new = _value(terms, c, x_new, t)
                if not np.isfinite(f_new):
                    raise _Stagnation(f"line search stalled (decrement {decrement:.3e})")
                break
        x, f = x_new, f_new
        if stop is not None and stop(x):
            return x, k + 1
    raise _Stagnation(f"no convergence in {settings.max_newton} Newton steps")


def _barrier_method(terms, c, x0, theta, settings, stop=None):
    x, t, iters = x0.copy(), settings.t0, 0
    for _ in range(settings.max_outer):
        x, k = _center(terms, c, x, t, settings, stop)
        iters += k
        if stop is not None and stop(x):
            break
        if theta / t < settings.tolerance:
            break
        t *= settings.growth
    return x, t, iters


def _phase1(problem: MaxDetProblem, x0: np.ndarray, settings: SolverSettings):
    """Minimize s such that every F_k(x) + s I and G_j(x) + s I is PSD.

    Returns (x, s_final, strictly_feasible).
    """
    n = problem.nvars
    exprs = problem.lmis + [term.expr for term in problem.logdets]

    def lift(expr):
        d = expr.dim
        idx = np.append(expr.idx, n)
        coeffs = np.concatenate([expr.coeffs.reshape(-1, d, d), np.eye(d)[None]])
        return AffineExpr(expr.const, idx, coeffs, expr.label)

    lower = AffineExpr(np.ones((1, 1)), np.array([n]), np.ones((1, 1, 1)), "s>=-1")
    terms = [_Term(lift(e), 0.0, 1.0) for e in exprs] + [_Term(lower, 0.0, 1.0)]
    worst = max(-np.linalg.eigvalsh(e(x0))[0] for e in exprs)
    z0 = np.append(x0, max(worst, 0.0) + 1.0)
    c = np.zeros(n + 1)
    c[n] = 1.0
    theta = sum(term.expr.dim for term in terms)

    def found(z):
        return z[n] < 0.0 and problem.is_strictly_feasible(z[:n])

    z, _, iters = _barrier_method(terms, c, z0, theta, settings, stop=found)
    return z[:n], float(z[n]), found(z), iters


def solve(problem: MaxDetProblem, settings: SolverSettings | None = None) -> MaxDetSolution:
    """Solve a max-det problem to a certified barrier gap."""
    settings = settings or SolverSettings()
    if problem.infeasible_reason:
        return MaxDetSolution(INFEASIBLE, message=problem.infeasible_reason)
    issues = problem.check()
    if issues:
        raise ValueError("malformed max-det problem: " + "; ".join(issues))

    n = problem.nvars
    iters = 0
    x0 = problem.initial_point
    if x0 is None or not problem.is_strictly_feasible(x0):
        start = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float)
        try:
            x0, s, ok, iters = _phase1(problem, start, settings)
        except _Stagnation as exc:
            return MaxDetSolution(NUMERICAL_FAILURE, message=f"phase I: {exc}")
        if not ok:
            return MaxDetSolution(
                INFEASIBLE, phase1_value=s, iterations=iters,
                message=f"minimized infeasibility {s:.3e} leaves no strictly feasible point")
        log.debug("phase I found a strictly feasible point (s=%.3e)", s)

    terms = ([_Term(F, 0.0, 1.0) for F in problem.lmis]
             + [_Term(ld.expr, ld.weight, 0.0) for ld in problem.logdets])
    theta = problem.barrier_parameter
    try:
        if theta == 0:
            x, k = _center(terms, problem.c, x0, 1.0, settings)
            t = np.inf
        else:
            x, t, k = _barrier_method(terms, problem.c, x0, theta, settings)
    except _Stagnation as exc:
        return MaxDetSolution(NUMERICAL_FAILURE, message=str(exc), iterations=iters)
    iters += k

    gap = theta / t if theta else 0.0
    sol = MaxDetSolution(
        OPTIMAL,
        values=problem.unpack(x),
        x=x,
        objective_nats=problem.objective(x),
        iterations=iters,
        gap_estimate=gap,
        min_constraint_eig=problem.min_lmi_eigenvalue(x),
    )
    if gap > settings.tolerance or not np.isfinite(sol.objective_nats):
        sol.status = NUMERICAL_FAILURE
        sol.message = f"terminated with barrier gap {gap:.3e}"
    return sol
