"""Max-det instances for sensor design.

Each builder returns a :class:`MaxDetProblem` whose optimal objective (in
nats) is the minimum directed information for the plant and budget, plus
a strictly feasible starting point so the solver can skip phase I.

Variables are named ``P1..PT`` (filtered covariances) and ``Pi1..`` or
``Delta1..`` (log-det epigraph variables).  The stationary problems use
``P`` and ``Pi``.
"""

from __future__ import annotations

import numpy as np

from ..model import PartiallyObservedPlant, StationaryPlant, TimeVaryingPlant
from ..riccati import RiccatiBundle
from .problem import MaxDetProblem

SINGULAR_TOL = 1e-10

# Trace cap on P for the asymptote problem; its optimum escapes to infinity
# along unstable modes.  The induced error is O(1 / cap); larger caps push
# the block LMIs past what double precision can center.
VSTAR_CAP_FACTOR = 1e3


def _logdet(M) -> float:
    sign, val = np.linalg.slogdet(M)
    if sign <= 0:
        raise ValueError("matrix is not positive definite")
    return float(val)


def _is_singular(W) -> bool:
    W = np.asarray(W, dtype=float)
    lam = np.linalg.eigvalsh(W)
    return bool(lam[0] < SINGULAR_TOL * max(np.linalg.norm(W, 2), 1e-300))


def _noise_factor(W) -> np.ndarray:
    """``F`` with ``F F' = W``, dropping numerically zero eigenvalues."""
    lam, U = np.linalg.eigh(0.5 * (W + W.T))
    keep = lam > SINGULAR_TOL * max(lam.max(initial=0.0), 1e-300)
    return U[:, keep] * np.sqrt(lam[keep])


def budget_floor(plant: TimeVaryingPlant, bundle: RiccatiBundle) -> float:
    """Cost attained with perfect state information: Tr(Phi_1 P_1|0) + sum Tr(W_t S_t)."""
    c2 = float(np.trace(bundle.Phi[0] @ plant.P_init))
    return c2 + sum(float(np.trace(W @ S)) for W, S in zip(plant.W, bundle.S))


def _schur_bound(P, A, W):
    """``(P^-1 + A'W^-1 A)^-1`` written without inverting P."""
    G = A @ P @ A.T + W
    return P - P @ A.T @ np.linalg.solve(G, A @ P)


def _bisect_scale(schedule, budget_ok, lo=0.0, hi=0.5, iters=60):
    """A scale in (lo, hi] whose schedule meets the budget with margin.

    Bisection finds the largest such scale; half of it is returned so the
    start is not pinned against the budget constraint.
    """
    if budget_ok(schedule(hi)):
        return hi
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if budget_ok(schedule(mid)):
            lo = mid
        else:
            hi = mid
    return 0.5 * lo if lo > 0 else None


def _tv_start(problem, plant, bundle, D, c2, delta_of):
    """Analytic strictly feasible point for the finite-horizon problems."""
    T = plant.T

    def schedule(beta):
        P = [beta * plant.P_init]
        for t in range(T - 1):
            P.append(beta * (plant.A[t] @ P[t] @ plant.A[t].T + plant.W[t]))
        return P

    def budget_ok(P):
        used = sum(float(np.trace(Th @ Pt)) for Th, Pt in zip(bundle.Theta, P))
        return used + c2 < D

    beta = _bisect_scale(schedule, budget_ok)
    if beta is None:
        return None
    P = schedule(beta)
    values = {f"P{t + 1}": P[t] for t in range(T)}
    for t in range(T - 1):
        name, val = delta_of(t, P[t])
        if name is not None:
            values[name] = 0.5 * val
    x = problem.pack(values)
    return x if problem.is_strictly_feasible(x) else None


def _add_budget(problem, P_vars, Theta, D, c2):
    def slack(*P):
        used = sum(np.trace(Th @ Pt) for Th, Pt in zip(Theta, P))
        return np.array([[D - c2 - used]])
    problem.add_lmi(slack, *P_vars, label="budget")


def _tv_common(plant, bundle, D):
    T, n = plant.T, plant.n
    if bundle.T != T:
        raise ValueError("Riccati bundle horizon does not match the plant")
    problem = MaxDetProblem()
    P = [problem.add_variable(f"P{t + 1}", n) for t in range(T)]
    c2 = budget_floor(plant, bundle)
    problem.meta.update(kind="tv", T=T, budget=float(D), floor=c2)
    if D <= c2:
        problem.infeasible_reason = (
            f"budget D={D:.6g} does not exceed the perfect-information floor c2={c2:.6g}")
    _add_budget(problem, P, bundle.Theta, D, c2)
    P_init = np.array(plant.P_init)
    problem.add_lmi(lambda X: P_init - X, P[0], label="P1 <= P_init")
    for t in range(T - 1):
        A, W = plant.A[t], plant.W[t]
        problem.add_lmi(lambda Xn, X, A=A, W=W: A @ X @ A.T + W - Xn, P[t + 1], P[t],
                        label=f"P{t + 2} <= A P{t + 1} A' + W")
    return problem, P, c2


def build_tv_problem(plant: TimeVaryingPlant, bundle: RiccatiBundle, D: float) -> MaxDetProblem:
    """Finite-horizon problem for strictly positive definite noise ``W_t``.

    ``Pi_T`` is eliminated by substituting ``P_T``; the objective is
    ``-1/2 sum log det Pi_t - 1/2 log det P_T + c1``.
    """
    for t, W in enumerate(plant.W[:-1]):
        if _is_singular(W):
            raise ValueError(f"W_{t + 1} is singular; use build_tv_singular_problem")
    problem, P, c2 = _tv_common(plant, bundle, D)
    T, n = plant.T, plant.n
    c1 = 0.5 * _logdet(plant.P_init) + 0.5 * sum(_logdet(W) for W in plant.W[:-1])
    problem.constant_offset = c1
    for t in range(T - 1):
        A, W = plant.A[t], plant.W[t]
        Pi = problem.add_variable(f"Pi{t + 1}", n)
        problem.add_logdet(lambda X: X, Pi, weight=0.5, label=f"Pi{t + 1}")

        def block(X, Y, A=A, W=W):
            return np.block([[X - Y, X @ A.T], [A @ X, A @ X @ A.T + W]])
        problem.add_lmi(block, P[t], Pi, label=f"epigraph {t + 1}")
    problem.add_logdet(lambda X: X, P[-1], weight=0.5, label=f"P{T}")
    problem.meta.update(c1=c1, variant="regular")

    def delta(t, Pt):
        return f"Pi{t + 1}", _schur_bound(Pt, plant.A[t], plant.W[t])
    if problem.infeasible_reason is None:
        problem.initial_point = _tv_start(problem, plant, bundle, D, c2, delta)
    return problem


def build_tv_singular_problem(plant: TimeVaryingPlant, bundle: RiccatiBundle,
                              D: float) -> MaxDetProblem:
    """Finite-horizon problem for possibly singular ``W_t = F_t F_t'``.

    Needs ``A_t`` nonsingular for ``t < T``.  The stage term becomes
    ``log|det A_t| - 1/2 log det Delta_t`` with
    ``[[I - Delta_t, F_t'], [F_t, A_t P_t A_t' + W_t]] >= 0``.
    """
    T = plant.T
    for t, A in enumerate(plant.A[:-1]):
        if abs(np.linalg.det(A)) <= SINGULAR_TOL * max(1.0, np.linalg.norm(A, 2)) ** A.shape[0]:
            raise ValueError(f"A_{t + 1} is singular; the singular-noise formulation "
                             "requires nonsingular A_t for t < T")
    problem, P, c2 = _tv_common(plant, bundle, D)
    c1 = 0.5 * _logdet(plant.P_init) + sum(np.linalg.slogdet(A)[1] for A in plant.A[:-1])
    problem.constant_offset = float(c1)
    factors = [_noise_factor(np.array(W)) for W in plant.W[:-1]]
    for t in range(T - 1):
        A, W, F = plant.A[t], plant.W[t], factors[t]
        k = F.shape[1]
        if k == 0:
            continue
        Dl = problem.add_variable(f"Delta{t + 1}", k)
        problem.add_logdet(lambda X: X, Dl, weight=0.5, label=f"Delta{t + 1}")

        def block(X, Y, A=A, W=W, F=F):
            return np.block([[np.eye(F.shape[1]) - Y, F.T], [F, A @ X @ A.T + W]])
        problem.add_lmi(block, P[t], Dl, label=f"epigraph {t + 1}")
    problem.add_logdet(lambda X: X, P[-1], weight=0.5, label=f"P{T}")
    problem.meta.update(c1=float(c1), variant="singular")

    def delta(t, Pt):
        F = factors[t]
        if F.shape[1] == 0:
            return None, None
        G = plant.A[t] @ Pt @ plant.A[t].T + plant.W[t]
        return f"Delta{t + 1}", np.eye(F.shape[1]) - F.T @ np.linalg.solve(G, F)
    if problem.infeasible_reason is None:
        problem.initial_point = _tv_start(problem, plant, bundle, D, c2, delta)
    return problem


def _stationary_core(A, W, label):
    n = A.shape[0]
    problem = MaxDetProblem()
    P = problem.add_variable("P", n)
    Pi = problem.add_variable("Pi", n)
    problem.constant_offset = 0.5 * _logdet(W)
    problem.add_logdet(lambda X: X, Pi, weight=0.5, label="Pi")
    problem.add_lmi(lambda X: A @ X @ A.T + W - X, P, label="P <= A P A' + W")

    def block(X, Y):
        return np.block([[X - Y, X @ A.T], [A @ X, A @ X @ A.T + W]])
    problem.add_lmi(block, P, Pi, label="epigraph")
    problem.meta.update(kind=label)
    return problem, P, Pi


def _stationary_point(problem, A, W, beta):
    P = beta * W
    return problem.pack({"P": P, "Pi": 0.5 * _schur_bound(P, A, W)})


def build_stationary_problem(plant: StationaryPlant, bundle: RiccatiBundle, D: float) -> MaxDetProblem:
    """Single-letter problem for the per-stage rate of a time-invariant plant."""
    A, W = np.array(plant.A), np.array(plant.W)
    if _is_singular(W):
        raise ValueError("W is singular; the stationary problem requires W > 0")
    S, Theta = bundle.S[0], bundle.Theta[0]
    floor = float(np.trace(W @ S))
    problem, P, _ = _stationary_core(A, W, "stationary")
    problem.meta.update(budget=float(D), floor=floor)
    problem.add_lmi(lambda X: np.array([[D - floor - np.trace(Theta @ X)]]), P, label="budget")
    if D <= floor:
        problem.infeasible_reason = (
            f"budget D={D:.6g} does not exceed the perfect-information floor Tr(WS)={floor:.6g}")
        return problem

    def budget_ok(beta):
        return floor + beta * float(np.trace(Theta @ W)) < D
    beta = _bisect_scale(lambda b: b, budget_ok)
    if beta is not None:
        problem.initial_point = _stationary_point(problem, A, W, beta)
    return problem


def build_vstar_problem(A, W, cap: float | None = None) -> MaxDetProblem:
    """Infinite-budget rate ``v*(A, W)``: no cost constraint, ``tr P`` capped."""
    A = np.asarray(A, dtype=float)
    W = np.asarray(W, dtype=float)
    if _is_singular(W):
        raise ValueError("W must be positive definite")
    if cap is None:
        cap = VSTAR_CAP_FACTOR * (1.0 + np.trace(W))
    problem, P, _ = _stationary_core(A, W, "vstar")
    problem.add_lmi(lambda X: np.array([[cap - np.trace(X)]]), P, label="trace cap")
    problem.meta.update(cap=float(cap))
    beta = min(0.5, 0.5 * cap / np.trace(W))
    problem.initial_point = _stationary_point(problem, A, W, beta)
    return problem


def po_reduction(plant: PartiallyObservedPlant, prekf) -> tuple[TimeVaryingPlant, float]:
    """Fully observed plant driven by the pre-filter innovations.

    The estimate ``x~_t`` evolves as ``x~_{t+1} = A x~_t + B u_t + psi_t``
    with ``psi_t ~ N(0, Psi_t)`` and ``Cov(x~_1) = P_1|0 - P~_1|1``.  The
    second value is the budget offset ``sum_t Tr(Q_t P~_{t+1|t+1})``
    charged to estimation error the controller cannot remove.
    """
    base = plant.plant
    T = base.T
    P1 = np.array(base.P_init) - np.array(prekf.Ptilde_filt[0])
    P1 = 0.5 * (P1 + P1.T)
    if _is_singular(P1):
        raise ValueError("Cov(x~_1) = P_init - P~_1|1 is singular; the reduced problem "
                         "needs as many independent measurements as states at t = 1")
    reduced = TimeVaryingPlant(A=base.A, B=base.B, W=tuple(prekf.Psi[:T]),
                               Q=base.Q, R=base.R, P_init=P1)
    offset = sum(float(np.trace(base.Q[t] @ prekf.Ptilde_filt[t + 1])) for t in range(T))
    return reduced, offset


def build_po_problem(plant: PartiallyObservedPlant, bundle: RiccatiBundle, prekf,
                     D: float) -> MaxDetProblem:
    """Partially observed problem through the innovations reduction.

    ``prekf`` carries ``Psi`` (``T`` stages) and ``Ptilde_filt``
    (``T + 1`` stages).  The problem is the finite-horizon one for the
    reduced plant with budget ``D~ = D - sum_t Tr(Q_t P~_{t+1|t+1})``;
    singular ``Psi_t`` selects the factored formulation.
    """
    reduced, offset = po_reduction(plant, prekf)
    D_reduced = D - offset
    if any(_is_singular(Psi) for Psi in reduced.W[:-1]):
        problem = build_tv_singular_problem(reduced, bundle, D_reduced)
    else:
        problem = build_tv_problem(reduced, bundle, D_reduced)
    problem.meta.update(kind="po", budget=float(D), reduced_budget=float(D_reduced),
                        estimation_offset=offset,
                        floor=problem.meta["floor"] + offset)
    if problem.infeasible_reason:
        problem.infeasible_reason = (
            f"budget D={D:.6g} does not exceed the floor {problem.meta['floor']:.6g} "
            f"(estimation error {offset:.6g} plus perfect-information cost of the reduced plant)")
    return problem
