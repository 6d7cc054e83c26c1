"""ODE problems ``u' = F(u)`` and their per-step linearization."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse
from scipy.sparse.linalg import LinearOperator, aslinearoperator

from .phi import as_matvec

#: Jacobians of systems up to this size may be materialized as dense matrices
DENSE_THRESHOLD = 1000

_SQRT_EPS = np.sqrt(np.finfo(float).eps)


class NonFiniteError(ArithmeticError):
    pass


@dataclass
class OdeProblem:
    """Autonomous initial value problem ``u' = F(u)``, ``u(t0) = u0``.

    Parameters
    ----------
    name : str
    rhs : callable
        ``u -> F(u)``.
    initial : ndarray
    t_span : (float, float)
    jacobian : callable, optional
        ``u -> J(u)`` as a dense array or a scipy sparse matrix.
    jvp : callable, optional
        ``(u, v) -> J(u) v``, used when no matrix is available.
    linear, nonlinear : optional
        Split ``F(u) = A u + g(u)``; ``linear`` is the constant operator ``A``.
    nonlinear_jacobian : callable, optional
        ``u -> g'(u)``; with the split this gives ``J = A + g'(u)``.
    exact : callable, optional
        ``t -> u(t)``.

    Without ``jacobian``, split or ``jvp`` the Jacobian is approximated by
    forward differences.
    """

    name: str
    rhs: Callable[[np.ndarray], np.ndarray]
    initial: np.ndarray
    t_span: tuple
    jacobian: Optional[Callable] = None
    jvp: Optional[Callable] = None
    linear: object = None
    nonlinear: Optional[Callable] = None
    nonlinear_jacobian: Optional[Callable] = None
    exact: Optional[Callable] = None

    def __post_init__(self):
        self.initial = np.asarray(self.initial, dtype=float)
        self.t_span = (float(self.t_span[0]), float(self.t_span[1]))
        if (self.linear is None) != (self.nonlinear is None):
            raise ValueError("a split needs both the linear and the nonlinear part")

    @property
    def dim(self) -> int:
        return self.initial.shape[0]

    @property
    def has_split(self) -> bool:
        return self.linear is not None

    def split_residual(self, u) -> float:
        """Relative mismatch ``||F(u) - A u - g(u)|| / (1 + ||F(u)||)``."""
        f = self.rhs(u)
        r = f - as_matvec(self.linear)(u) - self.nonlinear(u)
        return np.linalg.norm(r) / (1.0 + np.linalg.norm(f))


@dataclass(frozen=True)
class Linearization:
    """``F(u) = J_n u + g_n(u)`` with ``J_n`` the Jacobian at ``u_n``."""

    operator: object
    base_state: np.ndarray
    base_rhs: np.ndarray
    rhs: Callable

    def matvec(self, v):
        return np.asarray(as_matvec(self.operator)(v), dtype=float)

    def g(self, u):
        return self.rhs(u) - self.matvec(u)

    def delta(self, U):
        """``g_n(U) - g_n(u_n)``, formed without cancelling large ``J_n u`` terms."""
        return self.rhs(U) - self.base_rhs - self.matvec(U - self.base_state)


def linearize(problem: OdeProblem, u) -> Linearization:
    u = np.asarray(u, dtype=float)
    if u.shape != (problem.dim,):
        raise ValueError(f"state has shape {u.shape}, expected ({problem.dim},)")
    if not np.all(np.isfinite(u)):
        raise NonFiniteError("cannot linearize at a non-finite state")
    f = problem.rhs(u)
    if not np.all(np.isfinite(f)):
        raise NonFiniteError("right-hand side is not finite at the linearization point")
    return Linearization(jacobian_operator(problem, u, f), u, f, problem.rhs)


def jacobian_operator(problem: OdeProblem, u, f0=None):
    """Best available representation of ``dF/du`` at ``u``.

    Large systems with a ``jvp`` stay matrix-free; otherwise the analytic
    Jacobian, then the split, then ``jvp``, then finite differences.
    """
    if problem.jvp is not None and problem.dim > DENSE_THRESHOLD:
        return _jvp_operator(problem, u)
    if problem.jacobian is not None:
        return problem.jacobian(u)
    if problem.has_split and problem.nonlinear_jacobian is not None:
        A, dg = problem.linear, problem.nonlinear_jacobian(u)
        if _is_matrix(A) and _is_matrix(dg):
            return A + dg
        return aslinearoperator(A) + aslinearoperator(dg)
    if problem.jvp is not None:
        return _jvp_operator(problem, u)
    return fd_jacobian(problem, u, f0)


def _jvp_operator(problem, u):
    n = problem.dim
    return LinearOperator((n, n), matvec=lambda v: problem.jvp(u, v), dtype=float)


def matrix_jacobian(problem: OdeProblem, u):
    """``dF/du`` as an explicit dense or sparse matrix (implicit solvers need one)."""
    if problem.jacobian is not None:
        return problem.jacobian(u)
    J = jacobian_operator(problem, u)
    if _is_matrix(J):
        return J
    if problem.dim > DENSE_THRESHOLD:
        raise TypeError("an explicit Jacobian is required for systems this large")
    return fd_jacobian(problem, u, dense=True)


def _is_matrix(a):
    return isinstance(a, np.ndarray) or scipy.sparse.issparse(a)


def fd_jacobian(problem: OdeProblem, u, f0=None, dense: bool | None = None):
    """Forward-difference Jacobian of ``problem.rhs`` at ``u``.

    Column ``i`` uses the increment ``sqrt(eps) * max(|u_i|, 1)``. For
    ``dim <= DENSE_THRESHOLD`` (or ``dense=True``) the full matrix is
    returned, otherwise a ``LinearOperator`` applying directional differences.
    """
    u = np.asarray(u, dtype=float)
    F = problem.rhs
    f0 = F(u) if f0 is None else f0
    if not np.all(np.isfinite(f0)):
        raise NonFiniteError("right-hand side is not finite at the probing point")
    n = u.shape[0]
    if dense is None:
        dense = n <= DENSE_THRESHOLD
    if dense:
        J = np.empty((n, n))
        for i in range(n):
            eps = _SQRT_EPS * max(abs(u[i]), 1.0)
            up = u.copy()
            up[i] += eps
            col = F(up) - f0
            if not np.all(np.isfinite(col)):
                raise NonFiniteError(f"non-finite right-hand side while probing component {i}")
            # the increment actually represented in floating point
            J[:, i] = col / (up[i] - u[i])
        return J
    return LinearOperator((n, n), matvec=lambda v: fd_jvp(F, u, v, f0), dtype=float)


def fd_jvp(F, u, v, f0=None):
    """Directional difference ``(F(u + e v) - F(u)) / e``."""
    v = np.asarray(v, dtype=float).ravel()
    vn = np.linalg.norm(v)
    if vn == 0.0:
        return np.zeros_like(u)
    f0 = F(u) if f0 is None else f0
    eps = _SQRT_EPS * max(1.0, np.linalg.norm(u)) / vn
    out = (F(u + eps * v) - f0) / eps
    if not np.all(np.isfinite(out)):
        raise NonFiniteError("non-finite right-hand side during directional probing")
    return out
