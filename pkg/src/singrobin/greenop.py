"""Discrete Green operator (A + M_kappa)^-1 and its positivity properties."""
from __future__ import annotations

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .forms import AssembledForm, assemble
from .measures import ProblemData, boundary_load, interior_load
from .mesh import Mesh

__all__ = [
    "GreenOperator",
    "SolverError",
    "pcg",
    "apply_green",
    "solve_linear_robin",
    "positivity_floor",
]


class SolverError(RuntimeError):
    pass


def pcg(K: sp.csr_matrix, b: np.ndarray, x0=None, tol: float = 1e-12, max_iter: int | None = None):
    """Jacobi-preconditioned conjugate gradients; returns (x, iterations).

    Stops when ||K x - b|| <= tol ||b||.
    """
    n = K.shape[0]
    max_iter = max_iter or 10 * n + 100
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros(n), 0
    diag = K.diagonal()
    if np.any(diag <= 0):
        raise SolverError("system matrix has a nonpositive diagonal entry")
    dinv = 1.0 / diag
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - K @ x
    z = dinv * r
    p = z.copy()
    rz = r @ z
    for it in range(1, max_iter + 1):
        if np.linalg.norm(r) <= tol * bnorm:
            return x, it - 1
        Kp = K @ p
        pKp = p @ Kp
        if pKp <= 0:
            raise SolverError("system matrix is not positive definite (check beta)")
        alpha = rz / pKp
        x += alpha * p
        r -= alpha * Kp
        z = dinv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    if np.linalg.norm(r) <= tol * bnorm:
        return x, max_iter
    raise SolverError(
        f"conjugate gradients did not reach {tol:g} in {max_iter} iterations "
        f"(residual {np.linalg.norm(r) / bnorm:.3e})"
    )


class GreenOperator:
    """Action of (A + M_kappa)^-1 on load vectors.

    mode "iterative" uses preconditioned CG; mode "dense" factors the matrix
    once with a Cholesky decomposition and is meant for small reference runs.
    """

    def __init__(self, form, tol: float = 1e-12, max_iter: int | None = None, mode: str = "iterative"):
        """``form`` is an :class:`AssembledForm` or any SPD matrix."""
        if mode not in ("iterative", "dense"):
            raise ValueError(f"unknown mode {mode!r}")
        if isinstance(form, AssembledForm):
            self.form = form
            self.matrix = form.operator
        else:
            self.form = None
            self.matrix = sp.csr_matrix(np.asarray(form.toarray() if sp.issparse(form) else form, dtype=float))
        self.tol = tol
        self.max_iter = max_iter
        self.mode = mode
        self.iterations: list[int] = []
        self._chol = None
        if mode == "dense":
            try:
                self._chol = scipy.linalg.cho_factor(self.matrix.toarray())
            except np.linalg.LinAlgError as exc:
                raise SolverError("system matrix is not positive definite (check beta)") from exc

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def __call__(self, b: np.ndarray, x0=None) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if b.shape != (self.n,):
            raise ValueError(f"load of shape {b.shape} does not match {self.n} vertices")
        if self._chol is not None:
            self.iterations.append(0)
            return scipy.linalg.cho_solve(self._chol, b)
        u, it = pcg(self.matrix, b, x0=x0, tol=self.tol, max_iter=self.max_iter)
        self.iterations.append(it)
        return u


def apply_green(op: GreenOperator, b: np.ndarray) -> np.ndarray:
    return op(b)


def solve_linear_robin(mesh: Mesh, data: ProblemData, g_const: float, op: GreenOperator | None = None) -> np.ndarray:
    """Solve the Robin problem with the boundary source h * g_const."""
    op = op or GreenOperator(assemble(mesh, data))
    b = interior_load(mesh, data) + boundary_load(mesh, data.h * g_const)
    return op(b)


def positivity_floor(op: GreenOperator, b: np.ndarray) -> tuple[float, int]:
    """Return (min_i (G b)_i, argmin vertex) for a nonnegative nontrivial load."""
    b = np.asarray(b, dtype=float)
    if np.any(b < 0) or not b.sum() > 0:
        raise ValueError("positivity floor needs a nonnegative load with positive total mass")
    u = op(b)
    i = int(np.argmin(u))
    return float(u[i]), i
