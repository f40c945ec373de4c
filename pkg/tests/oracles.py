"""Independent reference computations used by the tests.

None of these call into the package's solver; they are closed forms,
hand recursions, and brute-force grid searches.
"""

import numpy as np


def scalar_are(a, b, q, r):
    """Positive root of b^2 S^2 + (r - a^2 r - q b^2) S - q r = 0."""
    c2, c1, c0 = b * b, r - a * a * r - q * b * b, -q * r
    return (-c1 + np.sqrt(c1 * c1 - 4 * c2 * c0)) / (2 * c2)


def scalar_gain(a, b, r, S):
    return -b * S * a / (b * b * S + r)


def scalar_theta(a, b, r, S):
    K = scalar_gain(a, b, r, S)
    return K * K * (b * b * S + r)


def scalar_stationary_di_bits(a, b, w, q, r, D):
    """Closed-form stationary rate for a scalar plant with |a| >= 1.

    The budget pins p = (D - wS) / Theta; the rate is 1/2 log2(a^2 + w/p).
    """
    S = scalar_are(a, b, q, r)
    Th = scalar_theta(a, b, r, S)
    p = (D - w * S) / Th
    return 0.5 * np.log2(a * a + w / p)


def grid_refine_min(f, lo, hi, points=41, rounds=40, shrink=0.25):
    """Minimize f over a box by repeated grid search and zoom.

    ``f`` returns ``inf`` off the feasible set.  Each round evaluates a
    full tensor grid, then re-centers a box ``shrink`` times smaller on
    the best point.
    """
    lo = np.array(lo, dtype=float)
    hi = np.array(hi, dtype=float)
    best_x, best_f = None, np.inf
    for _ in range(rounds):
        axes = [np.linspace(l, h, points) for l, h in zip(lo, hi)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        vals = np.array([f(p) for p in pts])
        i = int(np.argmin(vals))
        if vals[i] < best_f:
            best_f, best_x = vals[i], pts[i]
        if best_x is None:
            raise ValueError("no feasible grid point")
        half = (hi - lo) * shrink / 2
        lo, hi = np.maximum(best_x - half, lo), np.minimum(best_x + half, hi)
    return best_x, best_f


def scalar_stationary_nats(a, w, theta, floor, D, P):
    """Objective of the scalar stationary problem with Pi at its bound, or inf."""
    if P <= 0 or P > a * a * P + w + 1e-15 or floor + theta * P > D:
        return np.inf
    Pi = P * w / (a * a * P + w)
    return -0.5 * np.log(Pi) + 0.5 * np.log(w)


def scalar_tv2_nats(a, w, P0, th1, th2, floor, D, P1, P2):
    """Two-stage scalar problem with Pi_1 at its bound, or inf when infeasible."""
    if P1 <= 0 or P2 <= 0 or P1 > P0 or P2 > a * a * P1 + w:
        return np.inf
    if floor + th1 * P1 + th2 * P2 > D:
        return np.inf
    Pi1 = P1 * w / (a * a * P1 + w)
    c1 = 0.5 * np.log(P0) + 0.5 * np.log(w)
    return c1 - 0.5 * np.log(Pi1) - 0.5 * np.log(P2)


def scalar_riccati_2(a, b, q, r):
    """Hand recursion for T = 2 with constant scalar data."""
    S2 = q
    M2 = b * b * S2 + r
    Phi2 = a * a * (S2 - S2 * b * b * S2 / M2)
    K2 = -b * S2 * a / M2
    S1 = q + Phi2
    M1 = b * b * S1 + r
    Phi1 = a * a * (S1 - S1 * b * b * S1 / M1)
    K1 = -b * S1 * a / M1
    return dict(S=(S1, S2), Phi=(Phi1, Phi2), K=(K1, K2),
                Theta=(K1 * K1 * M1, K2 * K2 * M2))


def controllable_subspace(A, B, tol=1e-9):
    """Orthonormal basis of range [B, AB, ..., A^(n-1) B] via SVD."""
    n = A.shape[0]
    blocks, X = [], B
    for _ in range(n):
        blocks.append(X)
        X = A @ X
    K = np.hstack(blocks)
    U, s, _ = np.linalg.svd(K)
    rank = int(np.sum(s > tol * max(1.0, s[0] if s.size else 0.0)))
    return U[:, :rank], U[:, rank:]


def stabilizable_by_decomposition(A, B):
    """Kalman decomposition oracle: the uncontrollable block must be Schur stable."""
    _, Vperp = controllable_subspace(A, B)
    if Vperp.shape[1] == 0:
        return True
    A22 = Vperp.T @ A @ Vperp
    return bool(np.max(np.abs(np.linalg.eigvals(A22))) < 1.0)


def random_pd(rng, n, floor=0.1):
    X = rng.normal(size=(n, n))
    return X @ X.T + floor * np.eye(n)


def open_loop_cost(plant, bundle):
    """Cost with no sensing: the schedule P_{t+1} = A P A' + W from P_init."""
    P = np.array(plant.P_init)
    used = 0.0
    for t in range(plant.T):
        used += float(np.trace(bundle.Theta[t] @ P))
        P = plant.A[t] @ P @ plant.A[t].T + plant.W[t]
    c2 = float(np.trace(bundle.Phi[0] @ plant.P_init))
    c2 += sum(float(np.trace(W @ S)) for W, S in zip(plant.W, bundle.S))
    return c2, c2 + used


def grid_stationary_nats(a, b, w, q, r, D):
    """Brute-force optimum of the scalar stationary problem (nats), inf if infeasible."""
    S = scalar_are(a, b, q, r)
    th = scalar_theta(a, b, r, S)
    floor = w * S
    if D <= floor:
        return np.inf
    hi = (D - floor) / th if th > 0 else np.inf
    if abs(a) < 1:
        hi = min(hi, w / (1 - a * a))
    _, val = grid_refine_min(lambda x: scalar_stationary_nats(a, w, th, floor, D, x[0]),
                             [1e-12], [hi])
    return val


def grid_tv2_nats(a, b, w, q, r, P0, D):
    """Brute-force optimum of the two-stage scalar problem (nats), inf if infeasible."""
    ref = scalar_riccati_2(a, b, q, r)
    floor = ref["Phi"][0] * P0 + w * sum(ref["S"])
    if D <= floor:
        return np.inf
    th1, th2 = ref["Theta"]

    # the objective falls as P2 grows, so P2 sits at its largest feasible value;
    # a 2-D zoom stalls along the active budget line
    def f(x):
        P2 = a * a * x[0] + w
        if th2 > 0:
            P2 = min(P2, (D - floor - th1 * x[0]) / th2)
        return scalar_tv2_nats(a, w, P0, th1, th2, floor, D, x[0], P2)

    _, val = grid_refine_min(f, [1e-12], [P0])
    return val
