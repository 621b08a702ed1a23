"""Sparse linear systems and iterative solvers.

Systems assembled by the finite-volume core are symmetric positive
(semi)definite unless they contain advection.  Symmetric systems are solved
with a Jacobi-preconditioned conjugate gradient that optionally projects the
constant mode out of the residual every iteration (needed for pure-Neumann
problems and zero-average corrector solves).  Nonsymmetric systems go through
BiCGStab.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class SolverError(RuntimeError):
    """Raised when an iterative solve does not reach its tolerance.

    Carries the relative-residual history so callers can report or retry.
    """

    def __init__(self, message: str, residuals=None):
        super().__init__(message)
        self.residuals = list(residuals) if residuals is not None else []


@dataclass
class SparseSystem:
    """A square sparse operator with its right-hand side.

    ``pure_neumann`` marks operators whose row sums vanish identically, so the
    constant vector spans the nullspace and the right-hand side must have zero
    mean for solvability.
    """

    matrix: sp.csr_matrix
    rhs: np.ndarray
    symmetric: bool = True
    pure_neumann: bool = False

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


def combine(systems) -> SparseSystem:
    """Sum several assembled systems (e.g. diffusion plus advection)."""
    systems = [s for s in systems if s is not None]
    if not systems:
        raise ValueError("no systems to combine")
    matrix = systems[0].matrix.copy()
    rhs = systems[0].rhs.copy()
    for s in systems[1:]:
        if s.matrix.shape != matrix.shape:
            raise ValueError("system sizes do not match")
        matrix = matrix + s.matrix
        rhs = rhs + s.rhs
    return SparseSystem(
        matrix=matrix.tocsr(),
        rhs=rhs,
        symmetric=all(s.symmetric for s in systems),
        pure_neumann=all(s.pure_neumann for s in systems),
    )


@dataclass
class SolverConfig:
    method: str = "auto"  # "cg" | "bicgstab" | "auto"
    tol: float = 1e-10  # relative residual target
    max_iter: int = 100_000
    project_nullspace: bool = False

    def __post_init__(self):
        if not 0.0 < self.tol <= 1e-4:
            raise ValueError("solver tolerance must lie in (0, 1e-4]")
        if self.method not in ("auto", "cg", "bicgstab"):
            raise ValueError(f"unknown solver method {self.method!r}")


def _jacobi(matrix: sp.csr_matrix) -> np.ndarray:
    d = matrix.diagonal().copy()
    d[d == 0.0] = 1.0
    return 1.0 / d


def _cg(matrix, b, x0, tol, max_iter, project):
    """Jacobi-preconditioned CG; optionally deflates the constant mode."""
    n = b.shape[0]
    minv = _jacobi(matrix)
    x = np.zeros(n) if x0 is None else x0.astype(float).copy()
    if project:
        b = b - b.mean()
        x -= x.mean()
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return np.zeros(n), [0.0]

    r = b - matrix @ x
    if project:
        r -= r.mean()
    residuals = [float(np.linalg.norm(r)) / b_norm]
    z = minv * r
    p = z.copy()
    rz = float(r @ z)
    restarts = 0
    it = 0
    while residuals[-1] > tol:
        if it >= max_iter:
            raise SolverError(
                f"CG did not converge in {max_iter} iterations "
                f"(residual {residuals[-1]:.3e})",
                residuals,
            )
        q = matrix @ p
        pq = float(p @ q)
        if pq <= 0.0:
            raise SolverError("CG breakdown: operator not positive definite", residuals)
        a = rz / pq
        x += a * p
        r -= a * q
        if project:
            r -= r.mean()
        it += 1
        # resync the recurrence residual with the true one now and then
        if it % 256 == 0:
            r = b - matrix @ x
            if project:
                r -= r.mean()
            z = minv * r
            p = z.copy()
            rz = float(r @ z)
            residuals.append(float(np.linalg.norm(r)) / b_norm)
            continue
        residuals.append(float(np.linalg.norm(r)) / b_norm)
        if residuals[-1] <= tol:
            break
        z = minv * r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    # the recurrence can drift; verify against the true residual
    true_res = float(np.linalg.norm(b - matrix @ x)) / b_norm
    if true_res > 10.0 * tol and restarts < 2:
        return _cg(matrix, b, x, tol, max_iter, project)
    if project:
        x -= x.mean()
    return x, residuals


def _bicgstab(matrix, b, x0, tol, max_iter):
    n = b.shape[0]
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return np.zeros(n), [0.0]
    minv = _jacobi(matrix)
    precond = spla.LinearOperator(matrix.shape, matvec=lambda v: minv * v)
    residuals = []

    def track(xk):
        residuals.append(float(np.linalg.norm(b - matrix @ xk)) / b_norm)

    x, info = spla.bicgstab(
        matrix, b, x0=x0, rtol=tol, atol=0.0, maxiter=max_iter, M=precond,
        callback=track,
    )
    if info != 0:
        raise SolverError(f"BiCGStab failed with status {info}", residuals)
    return x, residuals


def solve_linear(system: SparseSystem, cfg: SolverConfig | None = None,
                 x0: np.ndarray | None = None) -> np.ndarray:
    """Solve ``system.matrix @ x = system.rhs`` to the configured tolerance.

    Pure-Neumann systems require ``project_nullspace`` and a compatible
    right-hand side; the returned vector then has zero mean.
    """
    cfg = cfg or SolverConfig()
    method = cfg.method
    if method == "auto":
        method = "cg" if system.symmetric else "bicgstab"

    project = False
    if system.pure_neumann:
        if not cfg.project_nullspace:
            raise SolverError("singular system: enable nullspace projection")
        b = system.rhs
        scale = float(np.linalg.norm(b)) / np.sqrt(b.size)
        if abs(float(b.mean())) > cfg.tol * max(scale, 1e-300):
            raise SolverError(
                f"incompatible right-hand side for singular system "
                f"(mean {b.mean():.3e})"
            )
        project = True

    if method == "cg":
        x, _ = _cg(system.matrix, system.rhs, x0, cfg.tol, cfg.max_iter, project)
    else:
        x, _ = _bicgstab(system.matrix, system.rhs, x0, cfg.tol, cfg.max_iter)
    return x
