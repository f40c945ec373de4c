"""Monte-Carlo simulation of synthesized designs.

The closed loop is

    x_{t+1} = A x_t + B u_t + w_t,   z_t = C_t x_t + v_t,
    xhat_t = xhat_t|t-1 + L_t (z_t - C_t xhat_t|t-1),   u_t = K_t xhat_t.

Partially observed designs insert the pre-filter: the physical sensor
``y_t = H_t x_t + g_t`` feeds ``x~_t`` and the virtual sensor measures
``x~_t`` instead of ``x_t``.

Trial ``k`` draws all of its noise from ``numpy.random.default_rng([seed, k])``
so results do not depend on how trials are batched or scheduled.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.stats

from .model import PartiallyObservedPlant, StationaryPlant, TimeVaryingPlant
from .riccati import lyapunov_stationary
from .synthesis import SynthesisDesign

DIVERGENCE_NORM = 1e9
CHUNK = 128
WHITENESS_LAGS = 5


@dataclass(frozen=True)
class SimConfig:
    steps: int
    trials: int
    seed: int = 0
    cap: float = 1e8
    record_trajectory: bool = False
    zero_initial: bool = False

    def __post_init__(self):
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError("steps must be a positive integer")
        if int(self.trials) != self.trials or self.trials < 1:
            raise ValueError("trials must be a positive integer")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.steps * self.trials > self.cap:
            raise ValueError(f"steps*trials = {self.steps * self.trials} exceeds the cap {self.cap:g}")


@dataclass
class SimResult:
    """Per-trial statistics of a simulation.

    ``cost`` holds each trial's average stage cost.  ``filter_cov`` is the
    trial mean of ``(x - xhat)(x - xhat)'``, one block per stage for
    finite-horizon designs and pooled over stages for stationary ones.
    ``innovations`` are whitened innovations, shape (trials, steps, dim),
    with ``nan`` where a stage has no measurement.
    """

    cost: np.ndarray
    orth: np.ndarray
    orth_pre: np.ndarray | None
    filter_cov_trials: np.ndarray
    innovations: np.ndarray
    innovation_cov: np.ndarray
    max_state_norm: float
    diverged: list = field(default_factory=list)
    trajectory: dict | None = None

    @property
    def ok(self) -> np.ndarray:
        return np.isfinite(self.cost)

    @property
    def empirical_cost_per_stage(self) -> float:
        return empirical_cost(self)[0]

    @property
    def filter_cov(self) -> np.ndarray:
        return self.filter_cov_trials[self.ok].mean(axis=0)

    @property
    def filter_cov_stderr(self) -> np.ndarray:
        F = self.filter_cov_trials[self.ok]
        return F.std(axis=0, ddof=1) / np.sqrt(len(F))


def _sqrt(M) -> np.ndarray:
    lam, U = np.linalg.eigh(0.5 * (M + M.T))
    lam = np.where(lam < 1e-12 * max(1.0, lam.max(initial=0.0)), 0.0, lam)
    return U * np.sqrt(lam)


def _stages(plant, T):
    if isinstance(plant, StationaryPlant):
        return [plant.A] * T, [plant.B] * T, [plant.W] * T, [plant.Q] * T, [plant.R] * T
    base = plant.plant if isinstance(plant, PartiallyObservedPlant) else plant
    return list(base.A), list(base.B), list(base.W), list(base.Q), list(base.R)


class _Setup:
    def __init__(self, design, plant, config, K, L, Ltilde):
        self.po = design.prekf is not None
        self.stationary = design.stationary
        if self.stationary:
            if not isinstance(plant, StationaryPlant):
                raise ValueError("stationary designs are simulated on a StationaryPlant")
            T = config.steps
        else:
            T = design.schedule.T
            if config.steps != T:
                raise ValueError(f"finite-horizon design has T={T}; config.steps must match")
            if self.po != isinstance(plant, PartiallyObservedPlant):
                raise ValueError("partially observed designs need a PartiallyObservedPlant and vice versa")
        self.T = T
        self.A, self.B, self.W, self.Q, self.R = _stages(plant, T)
        n, m = self.A[0].shape[0], self.B[0].shape[1]
        if design.schedule.P_filt[0].shape != (n, n) or design.K[0].shape != (m, n):
            raise ValueError("design dimensions do not match the plant")
        self.n, self.m = n, m

        def per_stage(seq):
            return [seq[0]] * T if self.stationary else list(seq)
        self.K = per_stage(K if K is not None else design.K)
        self.L = per_stage(L if L is not None else design.L)
        self.C = per_stage(design.sensor.C)
        self.Vs = [_sqrt(V) for V in per_stage(design.sensor.V)]
        self.Ws = [_sqrt(np.asarray(W, dtype=float)) for W in self.W]
        self.r_max = max(C.shape[0] for C in self.C)
        # whitening of the virtual-sensor innovations under the design covariances
        Pp = per_stage(design.schedule.P_pred)
        self.Ninv = [np.linalg.inv(np.linalg.cholesky(C @ P @ C.T + V)) if C.shape[0] else None
                     for C, P, V in zip(self.C, Pp, per_stage(design.sensor.V))]
        if self.po:
            pk = design.prekf
            self.H = list(plant.H[:T])
            self.Gs = [_sqrt(G) for G in plant.G[:T]]
            self.Lt = list(Ltilde if Ltilde is not None else pk.Ltilde[:T])
            self.p = self.H[0].shape[0]
            self.Sinv = [np.linalg.inv(np.linalg.cholesky(H @ P @ H.T + G))
                         for H, P, G in zip(self.H, pk.Ptilde_pred[:T], plant.G[:T])]
            self.P0 = np.array(plant.plant.P_init)
        elif not self.stationary:
            self.P0 = np.array(plant.P_init)
        if self.stationary and not config.zero_initial:
            # start from the design's own steady state, even when gains are overridden
            A, B, K0, L0 = self.A[0], self.B[0], design.K[0], design.L[0]
            C0, V0 = self.C[0], design.sensor.V[0]
            Pp0 = design.schedule.P_pred[0]
            F = A + B @ K0
            innov = L0 @ (C0 @ Pp0 @ C0.T + V0) @ L0.T if C0.shape[0] else np.zeros((n, n))
            Sigma = lyapunov_stationary(F, F @ innov @ F.T)
            self.start = (_sqrt(Pp0), _sqrt(Sigma))
        elif config.zero_initial:
            self.start = (np.zeros((n, n)), np.zeros((n, n)))
        else:
            self.start = (_sqrt(self.P0), np.zeros((n, n)))
        self.config = config


def _draw(setup: _Setup, k: int):
    cfg = setup.config
    rng = np.random.default_rng([int(cfg.seed), k])
    n, T = setup.n, setup.T
    e0 = rng.standard_normal(n)
    h0 = rng.standard_normal(n)
    w = rng.standard_normal((T, n))
    v = rng.standard_normal((T, max(setup.r_max, 1)))
    g = rng.standard_normal((T, setup.p)) if setup.po else None
    return e0, h0, w, v, g


def _run_chunk(setup: _Setup, trials: range):
    n, m, T = setup.n, setup.m, setup.T
    draws = [_draw(setup, k) for k in trials]
    N = len(draws)
    e0 = np.stack([d[0] for d in draws])
    h0 = np.stack([d[1] for d in draws])
    w = np.stack([d[2] for d in draws])
    v = np.stack([d[3] for d in draws])
    g = np.stack([d[4] for d in draws]) if setup.po else None

    Se, Sh = setup.start
    xhat_pred = h0 @ Sh.T
    x = xhat_pred + e0 @ Se.T
    xt_pred = np.zeros((N, n))
    alive = np.ones(N, dtype=bool)
    fail_stage = np.full(N, -1)
    cost = np.zeros(N)
    orth = np.zeros(N)
    orth_pre = np.zeros(N) if setup.po else None
    nblocks = 1 if setup.stationary else T
    fcov = np.zeros((N, nblocks, n, n))
    idim = setup.p if setup.po else max(setup.r_max, 1)
    innov = np.full((N, T, idim), np.nan)
    max_norm = float(np.max(np.linalg.norm(x, axis=1), initial=0.0))
    traj = None
    if setup.config.record_trajectory and 0 in trials:
        traj = {"x": np.zeros((T + 1, n)), "u": np.zeros((T, m)), "xhat": np.zeros((T, n))}

    for t in range(T):
        A, B, Q, R = setup.A[t], setup.B[t], setup.Q[t], setup.R[t]
        if setup.po:
            H, Lt = setup.H[t], setup.Lt[t]
            y = x @ H.T + g[:, t] @ setup.Gs[t].T
            nu = y - xt_pred @ H.T
            innov[:, t] = nu @ setup.Sinv[t].T
            xt = xt_pred + nu @ Lt.T
            src = xt
        else:
            src = x
        C, L = setup.C[t], setup.L[t]
        r = C.shape[0]
        if r:
            z = src @ C.T + v[:, t, :r] @ setup.Vs[t].T
            resid = z - xhat_pred @ C.T
            xhat = xhat_pred + resid @ L.T
            if not setup.po:
                innov[:, t, :r] = resid @ setup.Ninv[t].T
        else:
            xhat = xhat_pred
        u = xhat @ setup.K[t].T
        err = x - xhat
        orth += np.einsum("ki,ij,kj->k", xhat, Q, err)
        if setup.po:
            orth_pre += np.einsum("ki,ij,kj->k", xt, Q, x - xt)
        outer = err[:, :, None] * err[:, None, :]
        fcov[:, 0 if setup.stationary else t] += outer
        if traj is not None:
            i = list(trials).index(0)
            traj["x"][t], traj["u"][t], traj["xhat"][t] = x[i], u[i], xhat[i]
        x_next = x @ A.T + u @ B.T + w[:, t] @ setup.Ws[t].T
        cost += np.einsum("ki,ij,kj->k", x_next, Q, x_next) + np.einsum("ki,ij,kj->k", u, R, u)
        xhat_pred = xhat @ A.T + u @ B.T
        if setup.po:
            xt_pred = xt @ A.T + u @ B.T
        norms = np.linalg.norm(x_next, axis=1)
        max_norm = max(max_norm, float(np.max(np.where(alive, norms, 0.0), initial=0.0)))
        bad = alive & ~(norms <= DIVERGENCE_NORM)
        if bad.any():
            fail_stage[bad] = t + 2
            alive &= ~bad
            x_next[bad] = 0.0
            xhat_pred[bad] = 0.0
            if setup.po:
                xt_pred[bad] = 0.0
        x = x_next
        if traj is not None:
            traj["x"][t + 1] = x[list(trials).index(0)]

    cost /= T
    orth /= T
    if setup.po:
        orth_pre /= T
    if setup.stationary:
        fcov /= T
    dead = ~alive
    cost[dead] = np.nan
    orth[dead] = np.nan
    if setup.po:
        orth_pre[dead] = np.nan
    fcov[dead] = np.nan
    innov[dead] = np.nan
    diverged = [(k, int(s)) for k, s, d in zip(trials, fail_stage, dead) if d]
    return cost, orth, orth_pre, fcov, innov, max_norm, diverged, traj


def _threads() -> int:
    raw = os.environ.get("RATELQG_THREADS")
    try:
        return max(1, int(raw)) if raw else max(1, min(8, os.cpu_count() or 1))
    except ValueError:
        return 1


def simulate_closed_loop(design: SynthesisDesign, plant, config: SimConfig,
                         K=None, L=None, Ltilde=None) -> SimResult:
    """Simulate ``config.trials`` independent closed-loop runs.

    ``K``, ``L`` and ``Ltilde`` replace the design's controller,
    post-filter and pre-filter gains (per-stage sequences), which is how
    mutation tests are built.  Stationary designs start from the
    stationary joint distribution of ``(x, xhat_1|0)`` so every stage has
    the same expected cost; finite-horizon designs start from
    ``x_1 ~ N(0, P_init)`` and ``xhat_1|0 = 0``.

    Trials whose state norm exceeds 1e9 are stopped and listed in
    ``diverged`` as ``(trial, stage)``; their statistics are ``nan``.
    """
    if not isinstance(plant, (StationaryPlant, TimeVaryingPlant, PartiallyObservedPlant)):
        raise TypeError("plant must be a plant model")
    setup = _Setup(design, plant, config, K, L, Ltilde)
    chunks = [range(s, min(s + CHUNK, config.trials)) for s in range(0, config.trials, CHUNK)]
    workers = min(_threads(), len(chunks))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda c: _run_chunk(setup, c), chunks))
    else:
        parts = [_run_chunk(setup, c) for c in chunks]
    cost = np.concatenate([p[0] for p in parts])
    orth = np.concatenate([p[1] for p in parts])
    orth_pre = np.concatenate([p[2] for p in parts]) if setup.po else None
    fcov = np.concatenate([p[3] for p in parts])
    innov = np.concatenate([p[4] for p in parts])
    flat = innov.reshape(-1, innov.shape[-1])
    flat = flat[np.all(np.isfinite(flat), axis=1)]
    icov = flat.T @ flat / max(len(flat), 1)
    traj = next((p[7] for p in parts if p[7] is not None), None)
    return SimResult(
        cost=cost, orth=orth, orth_pre=orth_pre, filter_cov_trials=fcov,
        innovations=innov, innovation_cov=icov,
        max_state_norm=max(p[5] for p in parts),
        diverged=[d for p in parts for d in p[6]], trajectory=traj)


def empirical_cost(result: SimResult) -> tuple[float, float]:
    """Mean per-stage cost over non-diverged trials and its standard error."""
    c = result.cost[result.ok]
    if len(c) < 2:
        raise ValueError("the standard error needs at least two completed trials")
    return float(np.mean(c)), float(np.std(c, ddof=1) / np.sqrt(len(c)))


@dataclass(frozen=True)
class CheckReport:
    passed: bool
    estimate: float | np.ndarray
    stderr: float | np.ndarray
    detail: str = ""


def _orth_report(values, label):
    values = values[np.isfinite(values)]
    est = float(np.mean(values))
    se = float(np.std(values, ddof=1) / np.sqrt(len(values)))
    ok = abs(est) < 4.0 * se if se > 0 else abs(est) < 1e-12
    return ok, est, se, f"{label}: {est:.3e} +/- {se:.3e}"


def orthogonality_check(result: SimResult, design: SynthesisDesign | None = None) -> CheckReport:
    """Test ``E xhat' Q (x - xhat) = 0``; passes iff the estimate is within 4 stderr.

    Partially observed runs also test ``E x~' Q (x - x~) = 0`` for the
    pre-filter and pass only if both hold.
    """
    ok, est, se, msg = _orth_report(result.orth, "post-filter")
    if result.orth_pre is not None:
        ok2, est2, se2, msg2 = _orth_report(result.orth_pre, "pre-filter")
        return CheckReport(ok and ok2, np.array([est, est2]), np.array([se, se2]), f"{msg}; {msg2}")
    return CheckReport(ok, est, se, msg)


def whiteness_check(result: SimResult, lags: int = WHITENESS_LAGS, level: float = 0.95) -> CheckReport:
    """Lag-1..``lags`` autocorrelations of each whitened innovation component.

    The band is ``z / sqrt(N)`` with ``N`` the number of lagged pairs and
    ``z`` chosen so that the whole family of lags and components has
    coverage ``level`` (Bonferroni).  Partially observed runs use the
    pre-filter innovations, fully observed runs those of the virtual sensor.
    """
    E = result.innovations
    dims = [i for i in range(E.shape[-1]) if np.isfinite(E[..., i]).any()]
    if not dims:
        return CheckReport(True, np.zeros((lags, 0)), np.zeros((lags, 0)), "no innovations")
    z = scipy.stats.norm.ppf(1.0 - (1.0 - level) / (2.0 * lags * len(dims)))
    rho = np.zeros((lags, len(dims)))
    band = np.zeros((lags, len(dims)))
    for j, i in enumerate(dims):
        e = E[..., i]
        for k in range(1, lags + 1):
            a, b = e[:, :-k], e[:, k:]
            mask = np.isfinite(a) & np.isfinite(b)
            N = int(mask.sum())
            if N < 2:
                rho[k - 1, j], band[k - 1, j] = 0.0, np.inf
                continue
            num = np.sum(a[mask] * b[mask])
            den = np.sqrt(np.sum(a[mask] ** 2) * np.sum(b[mask] ** 2))
            rho[k - 1, j] = num / den
            band[k - 1, j] = z / np.sqrt(N)
    worst = float(np.max(np.abs(rho) / band))
    return CheckReport(bool(worst < 1.0), rho, band,
                       f"max |rho|/band = {worst:.3f} over {lags} lags x {len(dims)} components")


def write_trajectory_csv(result: SimResult, path) -> None:
    """Dump the recorded trajectory of trial 0 as ``t, x..., u..., xhat...``."""
    tr = result.trajectory
    if tr is None:
        raise ValueError("no trajectory recorded; set record_trajectory=True")
    T, n = tr["xhat"].shape
    m = tr["u"].shape[1]
    header = (["t"] + [f"x{i}" for i in range(n)] + [f"u{j}" for j in range(m)]
              + [f"xhat{i}" for i in range(n)])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for t in range(T):
            row = [t + 1] + list(tr["x"][t]) + list(tr["u"][t]) + list(tr["xhat"][t])
            w.writerow([row[0]] + [format(float(v), ".17g") for v in row[1:]])
