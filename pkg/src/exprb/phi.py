r"""
Evaluation of the exponential-integrator :math:`\varphi`-functions.

.. math::

    \varphi_0(z) = e^z, \qquad
    \varphi_k(z) = \int_0^1 e^{(1-\theta)z}\,\frac{\theta^{k-1}}{(k-1)!}\,d\theta,
    \qquad \varphi_k(z) = \frac{1}{k!} + z\,\varphi_{k+1}(z).

Three levels are provided:

- :func:`phi_scalar` for a single real or complex argument,
- :func:`phi_dense` for the full matrices :math:`\varphi_0(Z),\dots,\varphi_p(Z)`,
- linear combinations :math:`\sum_k \varphi_k(hJ)\,w_k` applied to vectors, either
  exactly through one augmented-matrix exponential (:class:`DenseBackend`) or
  matrix-free through an adaptive Arnoldi process (:class:`KrylovBackend`).

Both combination backends share the calling convention
``backend(op, h, vectors, times) -> (outputs, stats)``, where for every fraction
``tau`` in ``times`` the output is

.. math::

    \varphi_0(\tau hJ) w_0 + \sum_{k\ge1} \tau^k \varphi_k(\tau hJ)\, w_k ,

i.e. the solution at ``tau`` of :math:`x' = hJx + \sum_k \tau^{k-1}/(k-1)!\,w_k`,
:math:`x(0)=w_0`. With ``times=(1.0,)`` this is the plain combination.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse

#: |z| below which phi_scalar sums the Taylor series
TAYLOR_SWITCH = 1.0
_TAYLOR_TERMS = 20

#: largest phi index a combination request may carry
MAX_PHI_INDEX = 4


class KrylovConvergenceError(RuntimeError):
    """Raised when the Krylov iteration cannot meet its tolerance.

    The partially accumulated :class:`KrylovStats` are attached as ``stats``.
    """

    def __init__(self, msg, stats):
        super().__init__(msg)
        self.stats = stats


def phi_scalar(k: int, z):
    """phi_k of a real or complex scalar.

    Taylor series for ``|z| < 1``, otherwise the recurrence
    ``phi_j = (phi_{j-1} - 1/(j-1)!) / z`` started from ``exp(z)``.
    """
    if k < 0:
        raise ValueError(f"phi index must be non-negative, got {k}")
    if abs(z) < TAYLOR_SWITCH:
        # Horner on sum_j z^j / (j+k)!
        acc = 1.0 / math.factorial(_TAYLOR_TERMS + k)
        for j in range(_TAYLOR_TERMS - 1, -1, -1):
            acc = acc * z + 1.0 / math.factorial(j + k)
        return acc
    with np.errstate(over="ignore", invalid="ignore"):
        val = np.exp(z)
        for j in range(1, k + 1):
            val = (val - 1.0 / math.factorial(j - 1)) / z
    return complex(val) if isinstance(val, (complex, np.complexfloating)) else float(val)


@dataclass
class PhiValueTable:
    """The matrices phi_0(Z), ..., phi_kmax(Z) for one square argument Z."""

    argument: np.ndarray
    values: list

    @property
    def max_index(self) -> int:
        return len(self.values) - 1

    def __getitem__(self, k):
        return self.values[k]

    def recurrence_residual(self) -> float:
        """Largest relative residual of phi_k - I/k! - Z phi_{k+1} over k."""
        n = self.argument.shape[0]
        eye = np.eye(n)
        worst = 0.0
        for k in range(self.max_index):
            r = self.values[k] - eye / math.factorial(k) - self.argument @ self.values[k + 1]
            scale = max(1.0, np.linalg.norm(self.values[k], np.inf))
            worst = max(worst, np.linalg.norm(r, np.inf) / scale)
        return worst


def phi_dense(k_max: int, Z) -> PhiValueTable:
    """All of phi_0(Z), ..., phi_kmax(Z) from one block-matrix exponential.

    The exponential of the block upper-bidiagonal matrix with ``Z`` on the
    leading block and identities on the superdiagonal carries the phi
    matrices in its first block row.
    """
    Z = np.asarray(Z.toarray() if scipy.sparse.issparse(Z) else Z)
    if Z.ndim != 2 or Z.shape[0] != Z.shape[1]:
        raise ValueError(f"phi_dense needs a square matrix, got shape {Z.shape}")
    if k_max < 0:
        raise ValueError("k_max must be non-negative")
    if not np.all(np.isfinite(Z)):
        raise ValueError("phi_dense argument has non-finite entries")
    n = Z.shape[0]
    N = n * (k_max + 1)
    big = np.zeros((N, N), dtype=np.result_type(Z.dtype, float))
    big[:n, :n] = Z
    for j in range(k_max):
        big[j * n:(j + 1) * n, (j + 1) * n:(j + 2) * n] = np.eye(n)
    E = scipy.linalg.expm(big)
    values = [E[:n, j * n:(j + 1) * n].copy() for j in range(k_max + 1)]
    return PhiValueTable(Z, values)


@dataclass
class PhiCombination:
    """Request for sum_k phi_k(h J) w_k.

    ``operator`` is a dense/sparse matrix, a ``LinearOperator`` or a plain
    matvec callable; ``vectors`` is ``[w_0, ..., w_p]``.
    """

    operator: object
    scale: float
    vectors: Sequence[np.ndarray]
    max_index: int = MAX_PHI_INDEX

    def __post_init__(self):
        if not self.vectors:
            raise ValueError("at least w_0 is required")
        if len(self.vectors) - 1 > self.max_index:
            raise ValueError(f"phi index {len(self.vectors) - 1} exceeds maximum {self.max_index}")
        self.vectors = [np.asarray(w, dtype=float) for w in self.vectors]
        n = self.vectors[0].shape[0]
        for w in self.vectors:
            if w.shape != (n,):
                raise ValueError("combination vectors must share one length")
        shape = getattr(self.operator, "shape", None)
        if shape is not None and tuple(shape) != (n, n):
            raise ValueError(f"operator shape {shape} does not match vector length {n}")

    @property
    def dim(self) -> int:
        return self.vectors[0].shape[0]


@dataclass
class KrylovConfig:
    max_basis: int = 100
    tol: float = 1e-12
    min_substeps: int = 1
    # first basis size tried in a substep; grows from there
    min_basis: int = 6
    # smallest substep, as a fraction of the unit interval
    substep_floor: float = 2.0 ** -30

    def __post_init__(self):
        if self.max_basis < 2:
            raise ValueError("max_basis must be at least 2")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.min_substeps < 1:
            raise ValueError("min_substeps must be at least 1")
        self.min_basis = max(2, min(self.min_basis, self.max_basis))


@dataclass
class KrylovStats:
    matvecs: int = 0
    substeps: int = 0
    max_basis: int = 0
    rejections: int = 0

    def merge(self, other: "KrylovStats") -> None:
        self.matvecs += other.matvecs
        self.substeps += other.substeps
        self.max_basis = max(self.max_basis, other.max_basis)
        self.rejections += other.rejections


def as_matvec(op) -> Callable[[np.ndarray], np.ndarray]:
    if hasattr(op, "matvec"):
        return op.matvec
    if isinstance(op, np.ndarray) or scipy.sparse.issparse(op):
        return lambda v: op @ v
    if callable(op):
        return op
    raise TypeError(f"cannot apply operator of type {type(op).__name__}")


def _check_times(times):
    times = [float(t) for t in times]
    if not times:
        raise ValueError("need at least one output time")
    if any(not 0.0 < t <= 1.0 for t in times) or any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError(f"output times must be strictly increasing in (0, 1], got {times}")
    return times


def _augment(vectors):
    """Split [w_0..w_p] into w_0, the column block [w_p..w_1] and a balancing factor."""
    p = len(vectors) - 1
    w0 = vectors[0]
    if p == 0:
        return w0, None, 1.0
    W = np.column_stack(vectors[:0:-1])
    wmax = max(np.linalg.norm(w) for w in vectors[1:])
    eta = 2.0 ** -np.ceil(np.log2(wmax)) if wmax > 0 else 1.0
    return w0, W, eta


def phi_combination_dense(req: PhiCombination, times=(1.0,)):
    """Exact combination through the exponential of an (n+p)x(n+p) matrix.

    Returns the single vector for the default ``times``, else a list.
    """
    out, _ = DenseBackend()(req.operator, req.scale, req.vectors, times)
    return out[0] if len(out) == 1 and tuple(times) == (1.0,) else out


class DenseBackend:
    """Combination of phi-functions by augmented-matrix exponentials."""

    name = "dense"

    def __call__(self, op, h, vectors, times=(1.0,)):
        times = _check_times(times)
        J = op.toarray() if scipy.sparse.issparse(op) else op
        if not isinstance(J, np.ndarray):
            raise TypeError("the dense backend needs an explicit matrix")
        n = J.shape[0]
        p = len(vectors) - 1
        w0, W, eta = _augment(vectors)
        aug = np.zeros((n + p, n + p))
        aug[:n, :n] = h * J
        x0 = np.zeros(n + p)
        x0[:n] = w0
        if p:
            aug[:n, n:] = eta * W
            aug[n:-1, n + 1:] = np.eye(p - 1)
            x0[-1] = 1.0 / eta
        outs = [(scipy.linalg.expm(tau * aug) @ x0)[:n] for tau in times]
        return outs, KrylovStats()


class KrylovBackend:
    """Adaptive Arnoldi evaluation of phi-function combinations.

    The combination is the leading block of ``exp(tau * A_aug) x0`` for the
    augmented operator ``[[hJ, eta*W], [0, S]]`` (``S`` the nilpotent shift),
    so one exponential action delivers every phi term at once. The unit
    interval is covered by substeps; inside a substep the basis is grown
    until the a-posteriori estimate

        beta * h_{m+1,m} * tau * |e_m^T phi_1(tau H_m) e_1|

    falls below ``tol * tau * beta``; at ``max_basis`` the substep is halved
    instead (the basis is reused, since it does not depend on ``tau``).
    """

    name = "krylov"

    def __init__(self, config: KrylovConfig | None = None):
        self.config = config or KrylovConfig()

    def __call__(self, op, h, vectors, times=(1.0,)):
        cfg = self.config
        times = _check_times(times)
        stats = KrylovStats()
        matvec = as_matvec(op)
        n = vectors[0].shape[0]
        p = len(vectors) - 1
        w0, W, eta = _augment(vectors)
        dim = n + p

        def apply(v):
            top = h * np.asarray(matvec(v[:n]), dtype=float)
            if top.shape != (n,):
                raise ValueError(f"operator returned shape {top.shape}, expected ({n},)")
            if p == 0:
                return top
            top += eta * (W @ v[n:])
            return np.concatenate((top, v[n + 1:], [0.0]))

        x = np.zeros(dim)
        x[:n] = w0
        if p:
            x[-1] = 1.0 / eta

        mmax = min(cfg.max_basis, dim)
        V = np.empty((mmax + 1, dim))
        H = np.zeros((mmax + 1, mmax))
        outputs = []
        t = 0.0
        tau = 1.0 / cfg.min_substeps
        m_hint = min(cfg.min_basis, mmax)
        ti = 0
        while ti < len(times):
            beta = np.linalg.norm(x)
            if beta == 0.0:
                outputs.extend(np.zeros(n) for _ in times[ti:])
                break
            V[0] = x / beta
            H[:] = 0.0
            j = 0
            m = m_hint
            breakdown = False
            halved = False
            tau = min(tau, times[ti] - t)
            while True:
                while j < m:
                    w = apply(V[j])
                    stats.matvecs += 1
                    wnorm = np.linalg.norm(w)
                    # classical Gram-Schmidt, one reorthogonalization pass
                    c = V[:j + 1] @ w
                    w -= c @ V[:j + 1]
                    c2 = V[:j + 1] @ w
                    w -= c2 @ V[:j + 1]
                    H[:j + 1, j] = c + c2
                    hn = np.linalg.norm(w)
                    H[j + 1, j] = hn
                    j += 1
                    if hn <= 1e-14 * max(wnorm, 1e-300) or hn == 0.0:
                        breakdown = True
                        m = j
                        break
                    V[j] = w / hn
                stats.max_basis = max(stats.max_basis, m)
                if breakdown:
                    # invariant subspace: exact for every remaining output time
                    Hm = H[:m, :m]
                    for target in times[ti:]:
                        y = scipy.linalg.expm((target - t) * Hm)[:, 0]
                        outputs.append((beta * (y @ V[:m]))[:n])
                    stats.substeps += 1
                    return outputs, stats
                y, err = _substep_estimate(H[:m, :m], H[m, m - 1], tau, beta)
                if err <= cfg.tol * tau * beta:
                    break
                if m < mmax:
                    m = min(mmax, m + max(4, m // 3))
                    continue
                tau *= 0.5
                halved = True
                stats.rejections += 1
                if tau < cfg.substep_floor:
                    raise KrylovConvergenceError(
                        f"Krylov substep fell below {cfg.substep_floor:g} at t={t:.3g} "
                        f"(estimate {err:.3e}, basis {m})", stats)
            x = beta * (y @ V[:m])
            stats.substeps += 1
            t += tau
            m_hint = m
            if times[ti] - t <= 1e-14:
                t = times[ti]
                outputs.append(x[:n].copy())
                ti += 1
            tau = tau if halved else 2.0 * tau
        return outputs, stats


def _substep_estimate(Hm, h_next, tau, beta):
    """exp(tau H) e_1 together with the residual-type error estimate."""
    m = Hm.shape[0]
    M = np.zeros((m + 1, m + 1))
    M[:m, :m] = tau * Hm
    M[0, m] = 1.0
    E = scipy.linalg.expm(M)
    err = beta * h_next * tau * abs(E[m - 1, m])
    return E[:m, 0], err


def phi_combination_krylov(req: PhiCombination, cfg: KrylovConfig | None = None, times=(1.0,)):
    """Matrix-free sum_k phi_k(hJ) w_k; returns ``(vector, stats)``.

    With several ``times`` the first element is a list of vectors.
    """
    outs, stats = KrylovBackend(cfg)(req.operator, req.scale, req.vectors, times)
    if len(outs) == 1 and tuple(times) == (1.0,):
        return outs[0], stats
    return outs, stats
