"""Controller design: finite-horizon and stationary Riccati solutions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .model import StationaryPlant, TimeVaryingPlant


@dataclass(frozen=True)
class RiccatiBundle:
    """Per-stage Riccati data.

    ``S[t]`` is the value matrix, ``Phi[t] = A'(S - S B M^-1 B' S)A``,
    ``M[t] = B'SB + R``, ``K[t] = -M^-1 B'SA`` and ``Theta[t] = K'MK``.
    A stationary bundle holds a single stage.
    """

    S: tuple
    Phi: tuple
    M: tuple
    K: tuple
    Theta: tuple

    @property
    def T(self) -> int:
        return len(self.S)


def _sym(X):
    return 0.5 * (X + X.T)


def _stage(A, B, S, R):
    M = _sym(B.T @ S @ B + R)
    try:
        cf = scipy.linalg.cho_factor(M)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError("B'SB + R is not positive definite") from None
    K = -scipy.linalg.cho_solve(cf, B.T @ S @ A)
    BtSA = B.T @ S @ A
    Phi = _sym(A.T @ S @ A - BtSA.T @ scipy.linalg.cho_solve(cf, BtSA))
    Theta = _sym(K.T @ M @ K)
    return Phi, M, K, Theta


def backward_riccati(plant: TimeVaryingPlant) -> RiccatiBundle:
    """Backward recursion ``S_T = Q_T``, ``S_t = Q_t + Phi_{t+1}``."""
    T = plant.T
    S, Phi, M, K, Theta = [None] * T, [None] * T, [None] * T, [None] * T, [None] * T
    for t in reversed(range(T)):
        S[t] = _sym(np.array(plant.Q[t]) + (Phi[t + 1] if t + 1 < T else 0.0))
        Phi[t], M[t], K[t], Theta[t] = _stage(plant.A[t], plant.B[t], S[t], plant.R[t])
    return RiccatiBundle(tuple(S), tuple(Phi), tuple(M), tuple(K), tuple(Theta))


def are_residual(A, B, Q, R, S) -> float:
    """Relative residual of ``A'SA - S - A'SB(B'SB+R)^-1 B'SA + Q = 0``."""
    Phi, *_ = _stage(A, B, S, R)
    res = Phi - S + Q
    return float(np.linalg.norm(res) / (1.0 + np.linalg.norm(S)))


def solve_are(plant: StationaryPlant, tol: float = 1e-12, max_iter: int = 100_000) -> RiccatiBundle:
    """Stabilizing ARE solution by fixed-point iteration of the recursion.

    Iteration starts at ``S = Q`` and stops once successive iterates agree
    to ``tol`` relative.  Hitting ``max_iter`` means the recursion did not
    settle, which in practice signals a plant that is not stabilizable or
    detectable in floating point.
    """
    A, B, Q, R = plant.A, plant.B, plant.Q, plant.R
    S = _sym(np.array(Q))
    for _ in range(max_iter):
        Phi, *_ = _stage(A, B, S, R)
        S_next = _sym(Q + Phi)
        if not np.isfinite(np.linalg.norm(S_next)):
            raise RuntimeError("Riccati iteration diverged; check stabilizability")
        done = np.linalg.norm(S_next - S) <= tol * (1.0 + np.linalg.norm(S_next))
        S = S_next
        if done:
            break
    else:
        raise RuntimeError(f"Riccati iteration did not converge in {max_iter} steps; "
                           "check stabilizability and detectability")
    Phi, M, K, Theta = _stage(A, B, S, R)
    resid = are_residual(A, B, Q, R, S)
    if resid >= 1e-10:
        raise RuntimeError(f"ARE residual {resid:.2e} too large")
    rho = max(abs(np.linalg.eigvals(A + B @ K)))
    if rho >= 1.0:
        raise RuntimeError(f"ARE solution is not stabilizing (spectral radius {rho:.6g})")
    return RiccatiBundle((S,), (Phi,), (M,), (K,), (Theta,))


def lyapunov_stationary(A, W) -> np.ndarray:
    """Fixed point of ``P = A P A' + W`` for Schur-stable ``A``."""
    A = np.asarray(A, dtype=float)
    W = np.asarray(W, dtype=float)
    rho = max(abs(np.linalg.eigvals(A))) if A.size else 0.0
    if rho >= 1.0:
        raise ValueError(f"A is not Schur stable (spectral radius {rho:.6g})")
    P = _sym(scipy.linalg.solve_discrete_lyapunov(A, W))
    resid = np.linalg.norm(A @ P @ A.T + W - P) / (1.0 + np.linalg.norm(P))
    if resid >= 1e-10:
        raise RuntimeError(f"Lyapunov residual {resid:.2e} too large")
    return P
