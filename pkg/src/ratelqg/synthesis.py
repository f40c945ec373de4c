"""Sensor, filter and controller synthesis for rate-constrained LQG.

The pipeline for a fully observed plant is

1. controller gains from the Riccati recursion,
2. the covariance schedule ``P_t|t`` from a max-det problem,
3. a virtual sensor ``y_t = C_t x_t + v_t`` whose signal-to-noise ratio
   ``C'V^-1 C = P_t|t^-1 - P_t|t-1^-1`` reproduces that schedule, and
4. the Kalman filter for that sensor feeding ``u_t = K_t xhat_t``.

Partially observed plants first pass their measurements through a
pre-filter whose estimate ``x~_t`` becomes the state of a fully observed
plant driven by the filter innovations.

Rates are reported in bits: totals over the horizon for finite-horizon
designs and per stage for stationary designs.
"""

from __future__ import annotations

import logging
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from .errors import InfeasibleBudgetError, SolverError
from .maxdet import INFEASIBLE, OPTIMAL, SolverSettings, solve
from .maxdet.builders import (_is_singular, budget_floor, build_po_problem,
                              build_stationary_problem, build_tv_problem,
                              build_tv_singular_problem, po_reduction)
from .model import (PartiallyObservedPlant, StationaryPlant, TimeVaryingPlant,
                    validate_po_plant, validate_stationary, validate_tv_plant)
from .riccati import RiccatiBundle, backward_riccati, solve_are

log = logging.getLogger(__name__)

LN2 = np.log(2.0)
RANK_THRESHOLD = 1e-3
# (1/2) log2(4 pi e / 12), the per-dimension loss of a uniform quantizer.
QUANTIZER_LOSS_BITS = 0.5 * np.log2(4.0 * np.pi * np.e / 12.0)
# A direction with SNR eigenvalue lam carries about lam |P_pred| / 2 nats.
# Interior points leave residue directions worth at most the barrier gap,
# so eigenvalues with lam |P_pred| below SNR_GAP_FACTOR times the gap
# (floored at 1e-12) are dropped as residue, not sensing directions.
SNR_GAP_FACTOR = 20.0
# Truncated interior-point residue shifts the replayed filter by roughly
# |P| times the dropped eigenvalue; past this relative drift the max-det
# problem is re-solved with a tighter gap, down to POLISH_TOL_FLOOR.
CONSISTENCY_TOL = 1e-7
POLISH_TOL_FLOOR = 1e-12


def _sym(X):
    return 0.5 * (X + X.T)


@dataclass(frozen=True)
class CovarianceSchedule:
    """Filtered and predicted error covariances, ``P_t|t`` and ``P_t|t-1``."""

    P_filt: tuple
    P_pred: tuple

    @property
    def T(self) -> int:
        return len(self.P_filt)


@dataclass(frozen=True)
class SensorDesign:
    """Virtual sensor per stage: ``C_t' V_t^-1 C_t`` equals the retained SNR."""

    SNR: tuple
    C: tuple
    V: tuple

    @property
    def rank(self) -> tuple:
        return tuple(C.shape[0] for C in self.C)


@dataclass(frozen=True)
class PreKFDesign:
    """Pre-filter for a partially observed plant.

    ``Ltilde``, ``Ptilde_filt`` and ``Ptilde_pred`` hold ``T + 1`` stages;
    ``Psi[t]`` is the covariance of the innovation entering ``x~_{t+1}``.
    """

    Ltilde: tuple
    Ptilde_filt: tuple
    Ptilde_pred: tuple
    Psi: tuple


@dataclass(frozen=True)
class SynthesisDesign:
    """A complete sensor, filter and controller realization.

    ``noise`` is the process noise of the plant the post-filter sees:
    ``W_t`` for fully observed plants, ``Psi_t`` after the pre-filter.
    ``DI_bits`` is a horizon total for finite-horizon designs and a
    per-stage rate when ``stationary`` is set.
    """

    kind: str
    bundle: RiccatiBundle
    schedule: CovarianceSchedule
    sensor: SensorDesign
    L: tuple
    A: tuple
    noise: tuple
    DI_bits: float
    J_analytic: float
    D_requested: float
    gap_estimate: float
    floor: float
    prekf: PreKFDesign | None = None
    solver_iterations: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def stationary(self) -> bool:
        return self.kind == "stationary"

    @property
    def K(self) -> tuple:
        return self.bundle.K

    @property
    def rank(self) -> tuple:
        return self.sensor.rank

    def to_dict(self) -> dict:
        """Plain lists and floats, suitable for JSON."""
        def mats(seq):
            return [np.asarray(M, dtype=float).tolist() for M in seq]
        out = {
            "kind": self.kind,
            "K": mats(self.bundle.K),
            "C": mats(self.sensor.C),
            "V": mats(self.sensor.V),
            "L": mats(self.L),
            "P_filt": mats(self.schedule.P_filt),
            "P_pred": mats(self.schedule.P_pred),
            "DI_bits": float(self.DI_bits),
            "J": float(self.J_analytic),
            "D": float(self.D_requested),
            "rank": list(self.rank),
            "gap_estimate": float(self.gap_estimate),
        }
        if self.prekf is not None:
            out["Ltilde"] = mats(self.prekf.Ltilde)
            out["Psi"] = mats(self.prekf.Psi)
        return out


@dataclass(frozen=True)
class TradeoffCurve:
    """Samples of the rate-cost curve of a stationary plant.

    Each sample is ``(D, DI_bits, rank, R_upper_bits, feasible)``;
    infeasible samples carry ``nan`` rates and rank ``0``.
    """

    samples: tuple
    asymptote_bits: float
    Dmin: float

    @property
    def feasible(self) -> tuple:
        return tuple(s for s in self.samples if s[4])


# ---------------------------------------------------------------------------
# Sensor and filter building blocks


def snr_from_schedule(schedule: CovarianceSchedule, tol: float = 1e-8) -> list:
    """``SNR_t = P_t|t^-1 - P_t|t-1^-1``, clamped to PSD.

    Raises ``ValueError`` when ``P_t|t <= P_t|t-1`` fails by more than
    ``tol`` relative to ``|P_t|t-1|``.
    """
    out = []
    for t, (Pf, Pp) in enumerate(zip(schedule.P_filt, schedule.P_pred)):
        Pf, Pp = np.asarray(Pf, dtype=float), np.asarray(Pp, dtype=float)
        gap = np.linalg.eigvalsh(_sym(Pp - Pf))[0]
        if gap < -tol * (1.0 + np.linalg.norm(Pp, 2)):
            raise ValueError(f"stage {t + 1}: P_filt exceeds P_pred (eigenvalue {gap:.3e})")
        X = _sym(np.linalg.inv(Pf) - np.linalg.inv(Pp))
        lam, U = np.linalg.eigh(X)
        out.append(_sym((U * np.clip(lam, 0.0, None)) @ U.T))
    return out


def factor_snr(SNR, rel_threshold: float = RANK_THRESHOLD, abs_threshold: float = 0.0):
    """Factor ``SNR = C' V^-1 C`` with orthonormal rows in ``C``.

    Eigenvalues at least ``rel_threshold`` times the largest (and above
    ``abs_threshold``) are kept; ``V`` is the diagonal of their
    reciprocals.  Returns ``(C, V, r)``; ``r = 0`` gives ``0 x n`` and
    ``0 x 0`` arrays.
    """
    SNR = _sym(np.asarray(SNR, dtype=float))
    n = SNR.shape[0]
    lam, U = np.linalg.eigh(SNR)
    top = lam.max(initial=0.0)
    keep = (lam > 0.0) & (lam >= rel_threshold * top) & (lam > abs_threshold)
    keep &= top > 0.0
    order = np.argsort(-lam[keep], kind="stable")
    C = U[:, keep][:, order].T
    V = np.diag(1.0 / lam[keep][order])
    return C.reshape(-1, n), V.reshape(C.shape[0], C.shape[0]), int(C.shape[0])


def kalman_gain(P_pred, C, V) -> np.ndarray:
    """``L = P_pred C' (C P_pred C' + V)^-1``; an ``n x 0`` array when ``r = 0``."""
    P_pred = np.asarray(P_pred, dtype=float)
    C = np.asarray(C, dtype=float).reshape(-1, P_pred.shape[0])
    if C.shape[0] == 0:
        return np.zeros((P_pred.shape[0], 0))
    S = _sym(C @ P_pred @ C.T + np.asarray(V, dtype=float))
    try:
        cf = scipy.linalg.cho_factor(S)
    except np.linalg.LinAlgError:
        raise ValueError("innovation covariance C P C' + V is not positive definite") from None
    return scipy.linalg.cho_solve(cf, C @ P_pred).T


def posterior_covariance(P_pred, C, V) -> np.ndarray:
    """``(I - LC) P_pred`` for the gain of :func:`kalman_gain`."""
    P_pred = np.asarray(P_pred, dtype=float)
    L = kalman_gain(P_pred, C, V)
    C = np.asarray(C, dtype=float).reshape(-1, P_pred.shape[0])
    return _sym(P_pred - L @ C @ P_pred)


def prekf_design(plant: PartiallyObservedPlant) -> PreKFDesign:
    """Kalman filter for the physical sensor, run over ``T + 1`` stages."""
    base = plant.plant
    T, n = base.T, base.n
    Pp = np.array(base.P_init)
    Lt, Pf_all, Pp_all, innov = [], [], [], []
    for t in range(T + 1):
        H, G = plant.H[t], plant.G[t]
        S = _sym(H @ Pp @ H.T + G)
        s = np.linalg.svd(H, compute_uv=False)
        if s.size < H.shape[0] or s[-1] <= 1e-12 * max(1.0, s[0]):
            raise ValueError(f"H_{t + 1} is numerically rank deficient")
        try:
            cf = scipy.linalg.cho_factor(S)
        except np.linalg.LinAlgError:
            raise ValueError(f"H P H' + G is singular at stage {t + 1}") from None
        L = scipy.linalg.cho_solve(cf, H @ Pp).T
        Pf = _sym((np.eye(n) - L @ H) @ Pp)
        Lt.append(L)
        Pf_all.append(Pf)
        Pp_all.append(Pp)
        innov.append(S)
        if t < T:
            Pp = _sym(base.A[t] @ Pf @ base.A[t].T + base.W[t])
    Psi = tuple(_sym(Lt[t + 1] @ innov[t + 1] @ Lt[t + 1].T) for t in range(T))
    return PreKFDesign(tuple(Lt), tuple(Pf_all), tuple(Pp_all), Psi)


def prekf_inverse(xtilde_t, xtilde_prev, u_prev, design: PreKFDesign,
                  plant: PartiallyObservedPlant, t: int) -> np.ndarray:
    """Recover ``y_t`` from ``x~_t``, ``x~_{t-1}`` and ``u_{t-1}`` (``t`` is 1-based).

    At ``t = 1`` the prediction ``x~_1|0`` is zero and the previous values
    are ignored.
    """
    L = design.Ltilde[t - 1]
    H = plant.H[t - 1]
    s = np.linalg.svd(L, compute_uv=False)
    if s.size < L.shape[1] or s[-1] <= 1e-12 * max(1.0, s[0]):
        raise ValueError(f"pre-filter gain at stage {t} is not full column rank")
    Lpinv = np.linalg.pinv(L)
    if t == 1:
        pred = np.zeros(L.shape[0])
    else:
        A, B = plant.plant.A[t - 2], plant.plant.B[t - 2]
        pred = A @ np.asarray(xtilde_prev, dtype=float) + B @ np.asarray(u_prev, dtype=float)
    return Lpinv @ np.asarray(xtilde_t, dtype=float) + Lpinv @ (L @ H - np.eye(L.shape[0])) @ pred


# ---------------------------------------------------------------------------
# Analytic evaluation


def directed_info_analytic(schedule: CovarianceSchedule, A=None, noise=None) -> float:
    """Directed information of a schedule in bits.

    Sums ``1/2 log det P_t|t-1 - 1/2 log det P_t|t``.  When ``A`` and
    ``noise`` are given, ``P_{t+1|t}`` is recomputed as
    ``A_t P_t|t A_t' + noise_t`` instead of read from the schedule.
    """
    total = 0.0
    for t, Pf in enumerate(schedule.P_filt):
        if A is not None and t > 0:
            Pp = A[t - 1] @ schedule.P_filt[t - 1] @ A[t - 1].T + noise[t - 1]
        elif A is not None and len(schedule.P_filt) == 1 and np.ndim(A) == 2:
            Pp = A @ Pf @ A.T + noise
        else:
            Pp = schedule.P_pred[t]
        sp, lp = np.linalg.slogdet(Pp)
        sf, lf = np.linalg.slogdet(Pf)
        if sp <= 0 or sf <= 0:
            raise ValueError(f"stage {t + 1}: covariance is not positive definite")
        total += 0.5 * (lp - lf)
    return total / LN2


def cost_analytic(bundle: RiccatiBundle, schedule: CovarianceSchedule, plant,
                  prekf: PreKFDesign | None = None) -> float:
    """LQG cost of a design with the given filtered covariances.

    Finite horizon: ``Tr(Phi_1 P_1|0) + sum Tr(W_t S_t) + sum Tr(Theta_t P_t|t)``.
    Stationary: ``Tr(W S) + Tr(Theta P)`` per stage.  Partially observed
    plants are evaluated on the reduced plant plus the estimation-error
    cost ``sum Tr(Q_t P~_{t+1|t+1})``.
    """
    if isinstance(plant, StationaryPlant):
        return float(np.trace(plant.W @ bundle.S[0])
                     + np.trace(bundle.Theta[0] @ schedule.P_filt[0]))
    offset = 0.0
    if isinstance(plant, PartiallyObservedPlant):
        if prekf is None:
            prekf = prekf_design(plant)
        plant, offset = po_reduction(plant, prekf)
    used = sum(float(np.trace(Th @ P)) for Th, P in zip(bundle.Theta, schedule.P_filt))
    return offset + budget_floor(plant, bundle) + used


def data_rate_asymptote(A) -> float:
    """Sum of ``log2 |lambda|`` over eigenvalues of ``A`` with ``|lambda| >= 1``."""
    lam = np.abs(np.linalg.eigvals(np.asarray(A, dtype=float)))
    return float(np.sum(np.log2(lam[lam >= 1.0])))


def operational_bounds(DI_bits: float, r: int) -> tuple[float, float]:
    """Bounds ``DI <= R < DI + (r/2) log2(4 pi e / 12) + 1`` on the coding rate."""
    if DI_bits < 0 or r < 0:
        raise ValueError("DI_bits and r must be nonnegative")
    return float(DI_bits), float(DI_bits + r * QUANTIZER_LOSS_BITS + 1.0)


# ---------------------------------------------------------------------------
# Pipelines


def _check_budget(D):
    if not (np.isfinite(D) and D > 0):
        raise ValueError(f"budget must be a positive number, got {D}")


def _solve_or_raise(problem, D, settings):
    floor = problem.meta.get("floor", np.nan)
    if problem.infeasible_reason:
        raise InfeasibleBudgetError(D, floor, problem.infeasible_reason)
    sol = solve(problem, settings)
    if sol.status == INFEASIBLE:
        raise InfeasibleBudgetError(D, floor, sol.message)
    if sol.status != OPTIMAL:
        raise SolverError(f"max-det solve failed: {sol.message}")
    return sol


def _replay_error(design) -> float:
    replay = replay_schedule(design)
    pairs = zip(replay.P_filt + replay.P_pred, design.schedule.P_filt + design.schedule.P_pred)
    return max(np.linalg.norm(a - b) / (1.0 + np.linalg.norm(b)) for a, b in pairs)


def _solve_design(problem, D, settings, finish):
    """Solve, realize the design with ``finish``, and tighten the gap if the
    truncated sensor no longer reproduces the schedule."""
    settings = settings or SolverSettings()
    design = finish(_solve_or_raise(problem, D, settings))
    while _replay_error(design) > CONSISTENCY_TOL and settings.tolerance > POLISH_TOL_FLOOR:
        settings = replace(settings, tolerance=max(1e-2 * settings.tolerance, POLISH_TOL_FLOOR))
        log.debug("re-solving with gap tolerance %.1e for filter consistency", settings.tolerance)
        try:
            design = finish(_solve_or_raise(problem, D, settings))
        except SolverError:
            break
    return design


def _sensors(schedule, rel_threshold, gap):
    SNR = snr_from_schedule(schedule)
    Cs, Vs, Ls = [], [], []
    for X, Pp in zip(SNR, schedule.P_pred):
        floor = SNR_GAP_FACTOR * max(gap, 1e-12) / np.linalg.norm(Pp, 2)
        C, V, _ = factor_snr(X, rel_threshold, floor)
        Cs.append(C)
        Vs.append(V)
        Ls.append(kalman_gain(Pp, C, V))
    return SensorDesign(tuple(SNR), tuple(Cs), tuple(Vs)), tuple(Ls)


def _tv_schedule(values, plant):
    T = plant.T
    P_filt = [_sym(values[f"P{t + 1}"]) for t in range(T)]
    P_pred = [np.array(plant.P_init)]
    for t in range(T - 1):
        P_pred.append(_sym(plant.A[t] @ P_filt[t] @ plant.A[t].T + plant.W[t]))
    return CovarianceSchedule(tuple(P_filt), tuple(P_pred))


def _finish_tv(kind, plant, bundle, sol, problem, D, rel_threshold, prekf=None, J_plant=None):
    schedule = _tv_schedule(sol.values, plant)
    sensor, L = _sensors(schedule, rel_threshold, sol.gap_estimate)
    J = cost_analytic(bundle, schedule, J_plant if J_plant is not None else plant, prekf)
    return SynthesisDesign(
        kind=kind, bundle=bundle, schedule=schedule, sensor=sensor, L=L,
        A=tuple(plant.A), noise=tuple(plant.W),
        DI_bits=directed_info_analytic(schedule), J_analytic=J, D_requested=float(D),
        gap_estimate=sol.gap_estimate, floor=problem.meta["floor"], prekf=prekf,
        solver_iterations=sol.iterations,
        meta={"variant": problem.meta.get("variant"), "objective_bits": sol.objective_bits})


def synthesize_tv(plant: TimeVaryingPlant, D: float, settings: SolverSettings | None = None,
                  rel_threshold: float = RANK_THRESHOLD) -> SynthesisDesign:
    """Finite-horizon design; ``DI_bits`` is the total over the horizon."""
    _check_budget(D)
    plant = validate_tv_plant(plant).raise_if_invalid()
    bundle = backward_riccati(plant)
    if any(_is_singular(W) for W in plant.W[:-1]):
        problem = build_tv_singular_problem(plant, bundle, D)
    else:
        problem = build_tv_problem(plant, bundle, D)
    return _solve_design(problem, D, settings,
                         lambda sol: _finish_tv("tv", plant, bundle, sol, problem, D, rel_threshold))


def synthesize_po(plant: PartiallyObservedPlant, D: float, settings: SolverSettings | None = None,
                  rel_threshold: float = RANK_THRESHOLD) -> SynthesisDesign:
    """Partially observed design: pre-filter, then the reduced fully observed problem.

    The schedule, SNRs and gains refer to the reduced plant, whose
    process noise is ``Psi_t`` and initial covariance ``Cov(x~_1)``.
    """
    _check_budget(D)
    plant = validate_po_plant(plant).raise_if_invalid()
    prekf = prekf_design(plant)
    bundle = backward_riccati(plant.plant)
    problem = build_po_problem(plant, bundle, prekf, D)
    reduced, _ = po_reduction(plant, prekf)
    return _solve_design(problem, D, settings,
                         lambda sol: _finish_tv("po", reduced, bundle, sol, problem, D, rel_threshold,
                                                prekf=prekf, J_plant=plant))


def synthesize_stationary(plant: StationaryPlant, D: float, settings: SolverSettings | None = None,
                          rel_threshold: float = RANK_THRESHOLD) -> SynthesisDesign:
    """Time-invariant design; ``DI_bits`` is the per-stage rate."""
    _check_budget(D)
    plant = validate_stationary(plant).raise_if_invalid()
    bundle = solve_are(plant)
    problem = build_stationary_problem(plant, bundle, D)
    A, W = plant.A, plant.W

    def finish(sol):
        P = _sym(sol.values["P"])
        schedule = CovarianceSchedule((P,), (_sym(A @ P @ A.T + W),))
        sensor, L = _sensors(schedule, rel_threshold, sol.gap_estimate)
        return SynthesisDesign(
            kind="stationary", bundle=bundle, schedule=schedule, sensor=sensor, L=L,
            A=(A,), noise=(W,), DI_bits=directed_info_analytic(schedule),
            J_analytic=cost_analytic(bundle, schedule, plant), D_requested=float(D),
            gap_estimate=sol.gap_estimate, floor=problem.meta["floor"],
            solver_iterations=sol.iterations, meta={"objective_bits": sol.objective_bits})
    return _solve_design(problem, D, settings, finish)


def synthesize(plant, D: float, settings: SolverSettings | None = None,
               rel_threshold: float = RANK_THRESHOLD) -> SynthesisDesign:
    """Dispatch on the plant type."""
    if isinstance(plant, StationaryPlant):
        return synthesize_stationary(plant, D, settings, rel_threshold)
    if isinstance(plant, PartiallyObservedPlant):
        return synthesize_po(plant, D, settings, rel_threshold)
    if isinstance(plant, TimeVaryingPlant):
        return synthesize_tv(plant, D, settings, rel_threshold)
    raise TypeError(f"unsupported plant type {type(plant).__name__}")


def replay_schedule(design: SynthesisDesign) -> CovarianceSchedule:
    """Covariances produced by running the design's own Kalman filter.

    Starts from ``P_1|0`` of the design and alternates the measurement
    update with ``C_t, V_t`` and the time update with the design noise.
    """
    Pp = np.array(design.schedule.P_pred[0])
    P_filt, P_pred = [], []
    T = design.schedule.T
    for t in range(T):
        Pf = posterior_covariance(Pp, design.sensor.C[t], design.sensor.V[t])
        P_pred.append(Pp)
        P_filt.append(Pf)
        A, W = design.A[min(t, len(design.A) - 1)], design.noise[min(t, len(design.noise) - 1)]
        Pp = _sym(A @ Pf @ A.T + W)
    return CovarianceSchedule(tuple(P_filt), tuple(P_pred))


def _threads() -> int:
    raw = os.environ.get("RATELQG_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            log.warning("ignoring non-integer RATELQG_THREADS=%r", raw)
    return max(1, min(8, os.cpu_count() or 1))


def tradeoff_curve(plant: StationaryPlant, D_grid, settings: SolverSettings | None = None,
                   rel_threshold: float = RANK_THRESHOLD, threads: int | None = None) -> TradeoffCurve:
    """Minimum rate and coding-rate upper bound over a grid of budgets.

    Grid points at or below the cost floor ``Tr(W S)`` are marked
    infeasible.  Points are solved independently, possibly in parallel;
    the result does not depend on the thread count.
    """
    if not isinstance(plant, StationaryPlant):
        raise TypeError("trade-off curves are defined for stationary plants")
    grid = [float(D) for D in np.atleast_1d(np.asarray(D_grid, dtype=float))]
    if not grid:
        raise ValueError("budget grid is empty")
    if any(not (np.isfinite(D) and D > 0) for D in grid):
        raise ValueError("budget grid must hold positive finite numbers")
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise ValueError("budget grid must be sorted")
    plant = validate_stationary(plant).raise_if_invalid()
    if _is_singular(plant.Q):
        warnings.warn("Q is singular; the coding-rate upper bound assumes Q > 0",
                      RuntimeWarning, stacklevel=2)
    bundle = solve_are(plant)
    Dmin = float(np.trace(plant.W @ bundle.S[0]))

    def point(D):
        try:
            d = synthesize_stationary(plant, D, settings, rel_threshold)
        except InfeasibleBudgetError:
            return (D, np.nan, 0, np.nan, False)
        r = d.rank[0]
        return (D, d.DI_bits, r, operational_bounds(max(d.DI_bits, 0.0), r)[1], True)

    workers = threads if threads is not None else _threads()
    if workers <= 1 or len(grid) == 1:
        samples = [point(D) for D in grid]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            samples = list(pool.map(point, grid))
    return TradeoffCurve(tuple(samples), data_rate_asymptote(plant.A), Dmin)
