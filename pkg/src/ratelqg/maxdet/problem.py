"""Determinant-maximization problem description.

A problem is stated over a list of symmetric matrix variables, vectorized
into one real vector ``x`` by :func:`svec`.  It reads::

    minimize    c'x - sum_j w_j log det G_j(x) + offset
    subject to  F_k(x) >= 0   (positive semidefinite)

where every ``G_j`` and ``F_k`` is an affine symmetric-matrix valued
function of ``x``.  Scalar inequalities are 1x1 LMIs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SQRT2 = np.sqrt(2.0)


def svec_size(k: int) -> int:
    return k * (k + 1) // 2


def svec(M: np.ndarray) -> np.ndarray:
    """Upper triangle of ``M`` with off-diagonals scaled by sqrt(2).

    With this scaling ``svec(X) @ svec(Y) == trace(X @ Y)`` for symmetric
    ``X`` and ``Y``.
    """
    M = np.asarray(M, dtype=float)
    iu = np.triu_indices(M.shape[0])
    scale = np.where(iu[0] == iu[1], 1.0, SQRT2)
    return M[iu] * scale


def smat(v: np.ndarray, k: int) -> np.ndarray:
    """Inverse of :func:`svec`."""
    v = np.asarray(v, dtype=float)
    iu = np.triu_indices(k)
    scale = np.where(iu[0] == iu[1], 1.0, 1.0 / SQRT2)
    M = np.zeros((k, k))
    M[iu] = v * scale
    return M + np.triu(M, 1).T


def _svec_basis(k: int) -> np.ndarray:
    """Symmetric basis matrices, orthonormal under the trace inner product."""
    n = svec_size(k)
    basis = np.zeros((n, k, k))
    for j, (a, b) in enumerate(zip(*np.triu_indices(k))):
        if a == b:
            basis[j, a, a] = 1.0
        else:
            basis[j, a, b] = basis[j, b, a] = 1.0 / SQRT2
    return basis


def _require_symmetric(M: np.ndarray, label: str) -> None:
    if M.shape[0] != M.shape[1]:
        raise ValueError(f"{label or 'expression'} is not square: {M.shape}")
    if np.abs(M - M.T).max(initial=0.0) > 1e-9 * (1.0 + np.abs(M).max(initial=0.0)):
        raise ValueError(f"{label or 'expression'} is not symmetric")


@dataclass(frozen=True)
class Variable:
    name: str
    dim: int
    offset: int

    @property
    def size(self) -> int:
        return svec_size(self.dim)

    @property
    def slice(self) -> slice:
        return slice(self.offset, self.offset + self.size)


@dataclass
class AffineExpr:
    """``const + sum_i x[idx[i]] * coeffs[i]``, all symmetric d x d."""

    const: np.ndarray
    idx: np.ndarray
    coeffs: np.ndarray
    label: str = ""

    @property
    def dim(self) -> int:
        return self.const.shape[0]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        if len(self.idx) == 0:
            return self.const.copy()
        return self.const + np.tensordot(x[self.idx], self.coeffs, axes=1)


@dataclass
class LogDetTerm:
    expr: AffineExpr
    weight: float = 1.0


@dataclass
class MaxDetProblem:
    """A max-det program assembled variable by variable.

    Builders call :meth:`add_variable`, then describe every matrix
    expression as a Python function of the variable matrices (see
    :meth:`affine`).  ``constant_offset`` is added to the reported
    objective and never affects the optimizer.
    """

    variables: list = field(default_factory=list)
    c: np.ndarray = field(default_factory=lambda: np.zeros(0))
    logdets: list = field(default_factory=list)
    lmis: list = field(default_factory=list)
    constant_offset: float = 0.0
    initial_point: np.ndarray | None = None
    infeasible_reason: str | None = None
    meta: dict = field(default_factory=dict)

    @property
    def nvars(self) -> int:
        return sum(v.size for v in self.variables)

    @property
    def barrier_parameter(self) -> int:
        return sum(F.dim for F in self.lmis)

    def add_variable(self, name: str, dim: int) -> Variable:
        if any(v.name == name for v in self.variables):
            raise ValueError(f"duplicate variable name {name!r}")
        var = Variable(name, int(dim), self.nvars)
        self.variables.append(var)
        self.c = np.concatenate([self.c, np.zeros(var.size)])
        return var

    def variable(self, name: str) -> Variable:
        for v in self.variables:
            if v.name == name:
                return v
        raise KeyError(name)

    def affine(self, fn, *variables: Variable, label: str = "") -> AffineExpr:
        """Tabulate an affine matrix function of the given variables.

        ``fn`` receives one symmetric matrix per variable, in order, and
        must return a symmetric matrix that depends affinely on them.
        """
        zeros = [np.zeros((v.dim, v.dim)) for v in variables]
        const = np.atleast_2d(np.asarray(fn(*zeros), dtype=float))
        idx, coeffs = [], []
        for pos, var in enumerate(variables):
            for j, E in enumerate(_svec_basis(var.dim)):
                args = list(zeros)
                args[pos] = E
                Fi = np.atleast_2d(np.asarray(fn(*args), dtype=float)) - const
                _require_symmetric(Fi, label)
                idx.append(var.offset + j)
                coeffs.append(Fi)
        _require_symmetric(const, label)
        const = 0.5 * (const + const.T)
        coeffs = np.array(coeffs).reshape(len(idx), *const.shape)
        coeffs = 0.5 * (coeffs + coeffs.transpose(0, 2, 1))
        return AffineExpr(const, np.array(idx, dtype=int), coeffs, label)

    def add_lmi(self, fn, *variables: Variable, label: str = "") -> AffineExpr:
        expr = self.affine(fn, *variables, label=label)
        self.lmis.append(expr)
        return expr

    def add_logdet(self, fn, *variables: Variable, weight: float = 1.0,
                   label: str = "") -> AffineExpr:
        """Subtract ``weight * log det fn(...)`` from the objective."""
        if weight <= 0:
            raise ValueError("log-det weight must be positive")
        expr = self.affine(fn, *variables, label=label)
        self.logdets.append(LogDetTerm(expr, float(weight)))
        return expr

    def add_linear_objective(self, var: Variable, C: np.ndarray) -> None:
        """Add ``trace(C @ var)`` to the objective."""
        C = np.asarray(C, dtype=float)
        self.c[var.slice] += svec(0.5 * (C + C.T))

    # -- point utilities --------------------------------------------------

    def pack(self, values: dict) -> np.ndarray:
        x = np.zeros(self.nvars)
        for v in self.variables:
            x[v.slice] = svec(values[v.name])
        return x

    def unpack(self, x: np.ndarray) -> dict:
        return {v.name: smat(x[v.slice], v.dim) for v in self.variables}

    def objective(self, x: np.ndarray) -> float:
        """Objective at ``x`` (nats, offset included); ``inf`` off-domain."""
        val = float(self.c @ x) + self.constant_offset
        for term in self.logdets:
            sign, logdet = np.linalg.slogdet(term.expr(x))
            if sign <= 0:
                return np.inf
            val -= term.weight * logdet
        return val

    def min_lmi_eigenvalue(self, x: np.ndarray) -> float:
        if not self.lmis:
            return np.inf
        return min(np.linalg.eigvalsh(F(x))[0] for F in self.lmis)

    def is_strictly_feasible(self, x: np.ndarray) -> bool:
        for F in self.lmis + [t.expr for t in self.logdets]:
            try:
                np.linalg.cholesky(F(x))
            except np.linalg.LinAlgError:
                return False
        return True

    def check(self) -> list:
        """Structural problems with the instance (empty list if none)."""
        issues = []
        used = np.zeros(self.nvars, dtype=bool)
        for expr in self.lmis:
            used[expr.idx] = True
        for v in self.variables:
            if not used[v.slice].any():
                issues.append(f"variable {v.name} appears in no constraint")
        return issues
