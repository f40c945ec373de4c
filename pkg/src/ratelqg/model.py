"""Plant descriptions, validation, and the JSON plant file format.

Three plant kinds are supported:

* :class:`StationaryPlant` -- time-invariant ``(A, B, W, Q, R)``.
* :class:`TimeVaryingPlant` -- per-stage matrices over a horizon ``T``
  plus the initial state covariance ``P_init``.
* :class:`PartiallyObservedPlant` -- a time-varying plant observed through
  ``y_t = H_t x_t + g_t`` with ``g_t ~ N(0, G_t)``.

The cost charged to a policy is ``sum_t E(|x_{t+1}|_Q_t^2 + |u_t|_R_t^2)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import PlantFileError, PlantValidationError

SYM_TOL = 1e-9
PSD_TOL = 1e-10


def _matrix(a) -> np.ndarray:
    M = np.array(a, dtype=float)
    if M.ndim == 0:
        M = M.reshape(1, 1)
    elif M.ndim == 1:
        M = M.reshape(1, -1)
    M.setflags(write=False)
    return M


def _stages(seq) -> tuple:
    return tuple(_matrix(M) for M in seq)


def is_psd(M, tol: float = PSD_TOL) -> bool:
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return True
    scale = 1.0 + np.linalg.norm(M, 2)
    return bool(np.linalg.eigvalsh(0.5 * (M + M.T))[0] >= -tol * scale)


def is_pd(M) -> bool:
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return True
    return bool(np.linalg.eigvalsh(0.5 * (M + M.T))[0] > 0.0)


def psd_sqrt(M) -> np.ndarray:
    """Symmetric PSD square root, clamping negative eigenvalues at zero."""
    lam, U = np.linalg.eigh(0.5 * (np.asarray(M, dtype=float) + np.asarray(M).T))
    return (U * np.sqrt(np.clip(lam, 0.0, None))) @ U.T


@dataclass(frozen=True)
class StationaryPlant:
    A: np.ndarray
    B: np.ndarray
    W: np.ndarray
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        for name in ("A", "B", "W", "Q", "R"):
            object.__setattr__(self, name, _matrix(getattr(self, name)))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def time_varying(self, T: int, P_init) -> "TimeVaryingPlant":
        """The same plant over a finite horizon of ``T`` stages."""
        return TimeVaryingPlant(
            A=[self.A] * T, B=[self.B] * T, W=[self.W] * T,
            Q=[self.Q] * T, R=[self.R] * T, P_init=P_init)


@dataclass(frozen=True)
class TimeVaryingPlant:
    A: tuple
    B: tuple
    W: tuple
    Q: tuple
    R: tuple
    P_init: np.ndarray

    def __post_init__(self):
        for name in ("A", "B", "W", "Q", "R"):
            object.__setattr__(self, name, _stages(getattr(self, name)))
        object.__setattr__(self, "P_init", _matrix(self.P_init))

    @property
    def T(self) -> int:
        return len(self.A)

    @property
    def n(self) -> int:
        return self.A[0].shape[0]

    @property
    def m(self) -> int:
        return self.B[0].shape[1]


@dataclass(frozen=True)
class PartiallyObservedPlant:
    """A time-varying plant seen through a noisy linear sensor.

    ``H`` and ``G`` hold ``T`` or ``T + 1`` stages.  Stage ``T + 1`` only
    enters the pre-filter bookkeeping for the terminal state and does not
    change any optimal value; when omitted, stage ``T`` is reused.
    """

    plant: TimeVaryingPlant
    H: tuple
    G: tuple

    def __post_init__(self):
        H, G = _stages(self.H), _stages(self.G)
        if len(H) == self.plant.T and len(G) == self.plant.T and H:
            H, G = H + (H[-1],), G + (G[-1],)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "G", G)

    @property
    def T(self) -> int:
        return self.plant.T

    @property
    def n(self) -> int:
        return self.plant.n

    @property
    def p(self) -> int:
        return self.H[0].shape[0]


@dataclass(frozen=True)
class BudgetSpec:
    """LQG budget: total over the horizon, or per stage when stationary."""

    D: float

    def __post_init__(self):
        if not (np.isfinite(self.D) and self.D > 0):
            raise ValueError(f"budget must be a positive number, got {self.D}")


@dataclass
class ValidationReport:
    ok: bool
    issues: list = field(default_factory=list)
    symmetrized: bool = False
    plant: object = None

    def raise_if_invalid(self):
        if not self.ok:
            raise PlantValidationError(self.issues)
        return self.plant

    def __bool__(self):
        return self.ok


class _Checker:
    def __init__(self):
        self.issues = []
        self.symmetrized = False

    def shape(self, M, shape, label):
        if M.shape != shape:
            self.issues.append(f"{label} has shape {M.shape}, expected {shape}")
            return False
        return True

    def symmetric(self, M, label):
        asym = np.abs(M - M.T).max(initial=0.0)
        if asym > SYM_TOL * (1.0 + np.abs(M).max(initial=0.0)):
            self.issues.append(f"{label} is not symmetric (max asymmetry {asym:.3g})")
            return M
        if asym > 0.0:
            self.symmetrized = True
            M = _matrix(0.5 * (M + M.T))
        return M

    def psd(self, M, label):
        if not is_psd(M):
            self.issues.append(f"{label} not positive semidefinite")

    def pd(self, M, label):
        if not is_pd(M):
            self.issues.append(f"{label} not positive definite")


def _check_stage_matrices(ck, A, B, W, Q, R, n, m, tag):
    ok = ck.shape(A, (n, n), f"A{tag}") & ck.shape(B, (n, m), f"B{tag}")
    ok &= ck.shape(W, (n, n), f"W{tag}") & ck.shape(Q, (n, n), f"Q{tag}")
    ok &= ck.shape(R, (m, m), f"R{tag}")
    if not ok:
        return None
    W = ck.symmetric(W, f"W{tag}")
    Q = ck.symmetric(Q, f"Q{tag}")
    R = ck.symmetric(R, f"R{tag}")
    ck.psd(W, f"W{tag}")
    ck.psd(Q, f"Q{tag}")
    ck.pd(R, f"R{tag}")
    return W, Q, R


def validate_tv_plant(plant: TimeVaryingPlant) -> ValidationReport:
    """Check dimensions and definiteness of every stage of ``plant``."""
    ck = _Checker()
    if plant.T < 1:
        return ValidationReport(False, ["horizon T must be at least 1"])
    for name in ("B", "W", "Q", "R"):
        if len(getattr(plant, name)) != plant.T:
            ck.issues.append(f"{name} has {len(getattr(plant, name))} stages, expected {plant.T}")
    if ck.issues:
        return ValidationReport(False, ck.issues)
    n, m = plant.A[0].shape[0], plant.B[0].shape[1]
    Ws, Qs, Rs = [], [], []
    for t in range(plant.T):
        out = _check_stage_matrices(ck, plant.A[t], plant.B[t], plant.W[t],
                                    plant.Q[t], plant.R[t], n, m, f"_{t + 1}")
        if out is not None:
            Ws.append(out[0]); Qs.append(out[1]); Rs.append(out[2])
    P_init = plant.P_init
    if ck.shape(P_init, (n, n), "P_init"):
        P_init = ck.symmetric(P_init, "P_init")
        ck.pd(P_init, "P_init")
    if ck.issues:
        return ValidationReport(False, ck.issues)
    fixed = replace(plant, W=Ws, Q=Qs, R=Rs, P_init=P_init) if ck.symmetrized else plant
    return ValidationReport(True, [], ck.symmetrized, fixed)


def pbh_stabilizable(A, B, tol: float = 1e-9) -> bool:
    """PBH test: rank [lambda I - A, B] = n for every |lambda| >= 1."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    n = A.shape[0]
    for lam in np.linalg.eigvals(A):
        if abs(lam) < 1.0:
            continue
        M = np.hstack([lam * np.eye(n) - A, B.astype(complex)])
        s = np.linalg.svd(M, compute_uv=False)
        if s[-1] <= tol * max(1.0, s[0]):
            return False
    return True


def pbh_detectable(A, C, tol: float = 1e-9) -> bool:
    return pbh_stabilizable(np.asarray(A).T, np.asarray(C).T, tol)


def validate_stationary(plant: StationaryPlant) -> ValidationReport:
    """Definiteness plus PBH stabilizability of (A, B) and detectability of (A, Q^1/2)."""
    ck = _Checker()
    n, m = plant.A.shape[0], plant.B.shape[1]
    out = _check_stage_matrices(ck, plant.A, plant.B, plant.W, plant.Q, plant.R, n, m, "")
    if ck.issues:
        return ValidationReport(False, ck.issues)
    W, Q, R = out
    if not pbh_stabilizable(plant.A, plant.B):
        ck.issues.append("(A, B) not stabilizable")
    if not pbh_detectable(plant.A, psd_sqrt(Q)):
        ck.issues.append("(A, Q^1/2) not detectable")
    if ck.issues:
        return ValidationReport(False, ck.issues)
    fixed = replace(plant, W=W, Q=Q, R=R) if ck.symmetrized else plant
    return ValidationReport(True, [], ck.symmetrized, fixed)


def validate_po_plant(plant: PartiallyObservedPlant) -> ValidationReport:
    """Base-plant checks plus full row rank ``H_t`` and strictly PD ``W_t``."""
    base = validate_tv_plant(plant.plant)
    if not base.ok:
        return base
    ck = _Checker()
    n, T = plant.n, plant.T
    if len(plant.H) != T + 1 or len(plant.G) != T + 1:
        ck.issues.append(f"H and G need {T} or {T + 1} stages, got {len(plant.H)} and {len(plant.G)}")
        return ValidationReport(False, ck.issues)
    p = plant.H[0].shape[0]
    Gs = []
    for t in range(T + 1):
        H, G = plant.H[t], plant.G[t]
        if not (ck.shape(H, (p, n), f"H_{t + 1}") & ck.shape(G, (p, p), f"G_{t + 1}")):
            continue
        if np.linalg.matrix_rank(H) < p:
            ck.issues.append(f"H_{t + 1} does not have full row rank")
        G = ck.symmetric(G, f"G_{t + 1}")
        ck.psd(G, f"G_{t + 1}")
        Gs.append(G)
    for t, W in enumerate(base.plant.W):
        ck.pd(W, f"W_{t + 1}")
    if ck.issues:
        return ValidationReport(False, ck.issues)
    symmetrized = base.symmetrized or ck.symmetrized
    fixed = replace(plant, plant=base.plant, G=Gs) if symmetrized else plant
    return ValidationReport(True, [], symmetrized, fixed)


def validate(plant) -> ValidationReport:
    if isinstance(plant, StationaryPlant):
        return validate_stationary(plant)
    if isinstance(plant, PartiallyObservedPlant):
        return validate_po_plant(plant)
    if isinstance(plant, TimeVaryingPlant):
        return validate_tv_plant(plant)
    raise TypeError(f"not a plant: {type(plant).__name__}")


# -- plant files ------------------------------------------------------------

def _to_list(M) -> list:
    return [[float(v) for v in row] for row in np.asarray(M)]


def plant_to_dict(plant) -> dict:
    if isinstance(plant, StationaryPlant):
        return {"type": "stationary", **{k: _to_list(getattr(plant, k)) for k in "ABWQR"}}
    po = isinstance(plant, PartiallyObservedPlant)
    base = plant.plant if po else plant
    out = {"type": "po" if po else "tv", "T": base.T}
    for k in "ABWQR":
        out[k] = [_to_list(M) for M in getattr(base, k)]
    out["P_init"] = _to_list(base.P_init)
    if po:
        out["H"] = [_to_list(M) for M in plant.H]
        out["G"] = [_to_list(M) for M in plant.G]
    return out


def dumps_plant(plant) -> str:
    return json.dumps(plant_to_dict(plant), indent=1) + "\n"


def save_plant(plant, path) -> None:
    Path(path).write_text(dumps_plant(plant), encoding="utf-8")


def _field(obj, key, kind):
    if key not in obj:
        raise PlantFileError(f"missing field {key!r} in {kind} plant")
    return obj[key]


def _matrix_field(obj, key, kind) -> np.ndarray:
    value = _field(obj, key, kind)
    try:
        M = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise PlantFileError(f"field {key!r} is not a numeric matrix: {exc}") from None
    if M.ndim != 2:
        raise PlantFileError(f"field {key!r} must be an array of rows")
    return M


def _stage_field(obj, key, kind, T) -> list:
    value = _field(obj, key, kind)
    if not isinstance(value, list) or len(value) != T:
        raise PlantFileError(f"field {key!r} must hold {T} matrices")
    return [_matrix_field({key: v}, key, kind) for v in value]


def plant_from_dict(obj: dict, check: bool = True):
    if not isinstance(obj, dict):
        raise PlantFileError("plant file must hold a JSON object")
    kind = _field(obj, "type", "")
    if kind == "stationary":
        plant = StationaryPlant(*(_matrix_field(obj, k, kind) for k in "ABWQR"))
    elif kind in ("tv", "po"):
        T = _field(obj, "T", kind)
        if not isinstance(T, int) or isinstance(T, bool) or T < 1:
            raise PlantFileError("field 'T' must be a positive integer")
        stages = {k: _stage_field(obj, k, kind, T) for k in "ABWQR"}
        plant = TimeVaryingPlant(**stages, P_init=_matrix_field(obj, "P_init", kind))
        if kind == "po":
            H, G = _field(obj, "H", kind), _field(obj, "G", kind)
            nH = len(H) if isinstance(H, list) else -1
            if nH not in (T, T + 1):
                raise PlantFileError(f"field 'H' must hold {T} or {T + 1} matrices")
            plant = PartiallyObservedPlant(plant, _stage_field(obj, "H", kind, nH),
                                           _stage_field(obj, "G", kind, nH))
    else:
        raise PlantFileError(f"unknown plant type {kind!r}; expected stationary, tv or po")
    if check:
        plant = validate(plant).raise_if_invalid()
    return plant


def loads_plant(text: str, check: bool = True):
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise PlantFileError(f"parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return plant_from_dict(obj, check)


def load_plant(path, check: bool = True):
    """Read a plant file; validation failures raise :class:`PlantValidationError`."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise PlantFileError(f"cannot read plant file {path}: {exc}") from None
    return loads_plant(text, check)


def example_plant() -> StationaryPlant:
    """The randomly generated 4-state benchmark plant with ``Q = R = I``."""
    A = [[0.12, 0.63, -0.52, 0.33],
         [0.26, -1.28, 1.57, 1.13],
         [-1.77, -0.30, 0.77, 0.25],
         [-0.16, 0.20, -0.58, 0.56]]
    B = [[0.66, -0.58, 0.03, -0.20],
         [2.61, -0.91, 0.87, -0.07],
         [-0.64, -1.12, -0.19, 0.61],
         [0.93, 0.58, -1.18, -1.21]]
    W = [[4.94, -0.10, 1.29, 0.35],
         [-0.10, 5.55, 2.07, 0.31],
         [1.29, 2.07, 2.02, 1.43],
         [0.35, 0.31, 1.43, 3.10]]
    return StationaryPlant(A, B, W, np.eye(4), np.eye(4))
