r"""
Single-step maps.

Exponential Rosenbrock schemes are stored as reduced tableaus: nodes
:math:`c_2,\dots,c_s` plus, for every weight, the rational coefficients of a
linear combination of :math:`\varphi`-functions. One step reads

.. math::

    U_{i} &= u_n + c_i h\,\varphi_1(c_i hJ_n)F(u_n) + h\sum_{j<i} a_{ij}(hJ_n) D_j,\\
    u_{n+1} &= u_n + h\,\varphi_1(hJ_n)F(u_n) + h\sum_{i\ge2} b_i(hJ_n) D_i,

with :math:`D_i = g_n(U_i) - g_n(u_n)`, :math:`g_n(u) = F(u) - J_n u`.
``a_ij`` combines :math:`\varphi_k(c_i z)`, ``b_i`` combines :math:`\varphi_k(z)`.

The 2-stage Gauss--Legendre collocation method is included as the implicit
fourth-order reference, solved by simplified Newton iterations.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .model import Linearization, OdeProblem, linearize, matrix_jacobian
from .phi import DenseBackend, KrylovBackend, KrylovStats, MAX_PHI_INDEX, phi_dense, phi_scalar

#: systems up to this size use the exact dense phi backend by default
DENSE_PHI_MAX = 64


class StepFailure(RuntimeError):
    """A step produced a non-finite value or its nonlinear solve failed."""


class SchemeId(str, enum.Enum):
    EXPRB_EULER = "exprb_euler"
    EXPRB32 = "exprb32"
    EXPRB42N = "exprb42n"
    EXPRB42 = "exprb42"
    GAUSS42 = "gauss42"

    @classmethod
    def parse(cls, name) -> "SchemeId":
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).strip().lower().replace("-", "_"))
        except ValueError:
            raise ValueError(f"unknown scheme {name!r}; choose from {[s.value for s in cls]}") from None

    @property
    def label(self) -> str:
        return {"exprb42n": "exprb42N"}.get(self.value, self.value)

    @property
    def is_exponential(self) -> bool:
        return self is not SchemeId.GAUSS42


@dataclass(frozen=True)
class ReducedTableau:
    """Nodes and phi-combination weights of an exponential Rosenbrock scheme.

    ``b_coeffs[i - 2][k]`` is the coefficient of ``phi_k`` in ``b_i``;
    ``a_coeffs[(i, j)][k]`` the coefficient of ``phi_k(c_i z)`` in ``a_ij``.
    Stages are numbered from 1 as in the formulas, stage 1 being ``u_n``.
    """

    name: str
    nodes: tuple = ()
    b_coeffs: tuple = ()
    a_coeffs: dict = field(default_factory=dict)
    b_hat_coeffs: Optional[tuple] = None
    order: int = 0
    embedded_order: Optional[int] = None

    def __post_init__(self):
        if len(self.b_coeffs) != len(self.nodes):
            raise ValueError("need one weight b_i per node c_i (i >= 2)")
        if self.b_hat_coeffs is not None and len(self.b_hat_coeffs) != len(self.nodes):
            raise ValueError("embedded weights must match the number of nodes")
        for c in self.nodes:
            if not 0 < c <= 1:
                raise ValueError(f"node {c} outside (0, 1]")
        lists = list(self.b_coeffs) + list(self.a_coeffs.values()) + list(self.b_hat_coeffs or ())
        for coeffs in lists:
            if len(coeffs) - 1 > MAX_PHI_INDEX:
                raise ValueError(f"phi index above {MAX_PHI_INDEX} in {self.name}")
            if not all(math.isfinite(float(a)) for a in coeffs):
                raise ValueError(f"non-finite coefficient in {self.name}")
        for (i, j) in self.a_coeffs:
            if not 2 <= j < i <= self.stages:
                raise ValueError(f"a_{i}{j} is not a strictly lower stage coupling")

    @property
    def stages(self) -> int:
        return len(self.nodes) + 1

    def node(self, i):
        """c_i for stage i (c_1 = 0)."""
        return Fraction(0) if i == 1 else self.nodes[i - 2]

    def b_scalar(self, i, z):
        """b_i(z) for scalar z."""
        return sum(float(a) * phi_scalar(k, z) for k, a in enumerate(self.b_coeffs[i - 2]))

    def b_taylor(self, i, order):
        """Exact Taylor coefficients of b_i(z) up to z**order.

        Uses phi_k(z) = sum_j z^j / (j + k)!.
        """
        coeffs = self.b_coeffs[i - 2]
        return [sum(Fraction(a) / math.factorial(j + k) for k, a in enumerate(coeffs))
                for j in range(order + 1)]


def _phi_list(**terms):
    """``_phi_list(phi1=a, phi3=b)`` -> coefficient tuple indexed by k."""
    idx = {int(key[3:]): Fraction(val) for key, val in terms.items()}
    return tuple(idx.get(k, Fraction(0)) for k in range(max(idx) + 1))


_TABLEAUS = {
    SchemeId.EXPRB_EULER: ReducedTableau("exprb_euler", order=2),
    # 3rd-order scheme rebuilt from the order-3 condition b_2(Z) c_2^2 = 2 phi_3(Z)
    SchemeId.EXPRB32: ReducedTableau(
        "exprb32", nodes=(Fraction(1),), b_coeffs=(_phi_list(phi3=2),),
        b_hat_coeffs=((),), order=3, embedded_order=2),
    SchemeId.EXPRB42N: ReducedTableau(
        "exprb42N", nodes=(Fraction(3, 4),),
        b_coeffs=(_phi_list(phi1=Fraction(-8, 27), phi2=Fraction(48, 27)),),
        b_hat_coeffs=((),), order=4, embedded_order=2),
    SchemeId.EXPRB42: ReducedTableau(
        "exprb42", nodes=(Fraction(3, 4),), b_coeffs=(_phi_list(phi3=Fraction(32, 9)),),
        b_hat_coeffs=((),), order=4, embedded_order=2),
}


def tableau_of(scheme) -> ReducedTableau:
    scheme = SchemeId.parse(scheme)
    if scheme is SchemeId.GAUSS42:
        raise ValueError("gauss42 is an implicit Runge-Kutta method, not a reduced exponential tableau")
    return _TABLEAUS[scheme]


@dataclass
class StepStats:
    matvecs: int = 0
    krylov_substeps: int = 0
    max_basis: int = 0
    phi_calls: int = 0
    newton_iterations: int = 0
    factorizations: int = 0

    def add_phi(self, st: KrylovStats):
        self.phi_calls += 1
        self.matvecs += st.matvecs
        self.krylov_substeps += st.substeps
        self.max_basis = max(self.max_basis, st.max_basis)


@dataclass
class StepOutput:
    u_next: np.ndarray
    u_hat: Optional[np.ndarray] = None
    stats: StepStats = field(default_factory=StepStats)

    @property
    def err_vec(self):
        return None if self.u_hat is None else self.u_next - self.u_hat


def _all_zero(vectors):
    return all(not np.any(w) for w in vectors)


def _combine(backend, lin, h, vectors, times, stats):
    if not vectors or _all_zero(vectors):
        return [np.zeros_like(lin.base_state) for _ in times]
    outs, st = backend(lin.operator, h, vectors, times)
    stats.add_phi(st)
    return outs


def _weighted(coeffs_by_stage, D, h, n, scale=1.0):
    """phi-index-ordered vectors h * sum_i alpha_ik D_i (divided by scale**k)."""
    p = max((len(c) - 1 for c in coeffs_by_stage.values()), default=-1)
    vecs = [np.zeros(n) for _ in range(p + 1)]
    for i, coeffs in coeffs_by_stage.items():
        for k, a in enumerate(coeffs):
            if a:
                vecs[k] += (h * float(a) / scale ** k) * D[i]
    return vecs


def step_exprb_generic(tab: ReducedTableau, lin: Linearization, h: float, backend) -> StepOutput:
    """One exponential Rosenbrock step of size ``h`` from ``lin.base_state``.

    The terms ``c_i h phi_1(c_i h J) F(u_n)`` for every node and ``h phi_1(hJ) F(u_n)``
    come from a single backend call with several output times; the weights
    ``b_i`` need one more call. The embedded solution is formed only when
    the tableau carries ``b_hat_coeffs``.
    """
    if not h > 0:
        raise ValueError("step size must be positive")
    u, f = lin.base_state, lin.base_rhs
    n = u.shape[0]
    stats = StepStats()
    times = sorted({float(c) for c in tab.nodes} | {1.0})
    base = dict(zip(times, _combine(backend, lin, h, [np.zeros(n), h * f], times, stats)))

    D = {}
    for i in range(2, tab.stages + 1):
        ci = float(tab.node(i))
        U = u + base[ci]
        coupling = {j: tab.a_coeffs[(i, j)] for j in range(2, i) if (i, j) in tab.a_coeffs}
        if coupling:
            vecs = _weighted(coupling, D, h, n, scale=ci)
            U = U + _combine(backend, lin, h, vecs, (ci,), stats)[0]
        if not np.all(np.isfinite(U)):
            raise StepFailure(f"stage {i} is not finite")
        D[i] = lin.delta(U)
        stats.matvecs += 1
        if not np.all(np.isfinite(D[i])):
            raise StepFailure(f"nonlinear remainder of stage {i} is not finite")

    euler = u + base[1.0]
    weights = {i: tab.b_coeffs[i - 2] for i in range(2, tab.stages + 1)}
    if weights:
        u_next = euler + _combine(backend, lin, h, _weighted(weights, D, h, n), (1.0,), stats)[0]
    else:
        u_next = euler
    u_hat = None
    if tab.b_hat_coeffs is not None:
        hat = {i: tab.b_hat_coeffs[i - 2] for i in range(2, tab.stages + 1)}
        vecs = _weighted(hat, D, h, n)
        u_hat = euler if _all_zero(vecs) else euler + _combine(backend, lin, h, vecs, (1.0,), stats)[0]
    if not np.all(np.isfinite(u_next)):
        raise StepFailure("step result is not finite")
    return StepOutput(u_next, u_hat, stats)


def default_backend(problem: OdeProblem, krylov_config=None):
    """Dense exponentials for small systems with a matrix Jacobian, Krylov otherwise."""
    small = problem.dim <= DENSE_PHI_MAX
    if small and (problem.jacobian is not None or problem.jvp is None):
        return DenseBackend()
    return KrylovBackend(krylov_config)


class ExprbStepper:
    """Exponential Rosenbrock integrator context for one problem."""

    def __init__(self, scheme, problem: OdeProblem, backend=None, krylov_config=None):
        self.scheme = SchemeId.parse(scheme)
        self.tableau = tableau_of(self.scheme)
        self.problem = problem
        self.backend = backend if backend is not None else default_backend(problem, krylov_config)
        self.order = self.tableau.order
        self.embedded_order = self.tableau.embedded_order

    def step(self, u, h) -> StepOutput:
        return step_exprb_generic(self.tableau, linearize(self.problem, u), h, self.backend)


# ---------------------------------------------------------------------------
# 2-stage Gauss-Legendre

_S3 = math.sqrt(3.0)
GAUSS_A = np.array([[0.25, 0.25 - _S3 / 6], [0.25 + _S3 / 6, 0.25]])
GAUSS_B = np.array([0.5, 0.5])
GAUSS_C = np.array([0.5 - _S3 / 6, 0.5 + _S3 / 6])


# increments at this level are rounding noise; the rate estimate is meaningless there
_ROUNDOFF = 16 * np.finfo(float).eps


@dataclass
class NewtonConfig:
    # on the increment norm scaled by 1 + |u_n|
    tol: float = 1e-13
    max_iter: int = 12


class GaussStepper:
    """2-stage Gauss-Legendre collocation with simplified Newton iterations.

    The Jacobian is frozen at ``u_n`` and the stage system is decoupled by
    diagonalizing ``A^{-1}`` (eigenvalues ``3 +- i sqrt(3)``), so every step
    costs one complex ``n x n`` LU factorization. Newton starts from the
    previous step's collocation polynomial; iterations stop once the
    contraction-based estimate of the remaining error drops below ``tol``.
    """

    order = 4
    embedded_order = None

    def __init__(self, problem: OdeProblem, newton: NewtonConfig | None = None,
                 A=GAUSS_A, b=GAUSS_B, c=GAUSS_C):
        self.problem = problem
        self.newton = newton or NewtonConfig()
        self.A, self.b, self.c = np.asarray(A, float), np.asarray(b, float), np.asarray(c, float)
        Ainv = np.linalg.inv(self.A)
        lam, vecs = np.linalg.eig(Ainv)
        if abs(lam[0].imag) == 0.0:
            raise ValueError("expected a complex pair of eigenvalues for A^{-1}")
        self._lam = lam[0]
        v = vecs[:, 0]
        self._T = np.column_stack([v, v.conj()])
        self._Tinv = np.linalg.inv(self._T)
        self._Ainv = Ainv
        # u_{n+1} = u_n + d^T Z avoids the stiff amplification of F(U_i)
        self._d = self.b @ Ainv
        self._prev = None

    def _factorize(self, J, h):
        shift = self._lam / h
        if scipy.sparse.issparse(J):
            M = (shift * scipy.sparse.identity(J.shape[0], format="csc") - J).tocsc().astype(complex)
            lu = scipy.sparse.linalg.splu(M)
            return lu.solve
        if isinstance(J, np.ndarray):
            M = shift * np.eye(J.shape[0]) - J
            lu = scipy.linalg.lu_factor(M, check_finite=True)
            return lambda r: scipy.linalg.lu_solve(lu, r)
        raise TypeError("gauss42 needs the Jacobian as an explicit dense or sparse matrix")

    def _guess(self, h):
        if self._prev is None:
            return np.zeros((2, self.problem.dim))
        Z, h_old = self._prev
        # quadratic through (0, 0), (c_1, Z_1), (c_2, Z_2) in units of the old step
        s = 1.0 + self.c * (h / h_old)
        nodes = np.concatenate(([0.0], self.c))
        vals = np.vstack([np.zeros_like(Z[0]), Z])
        out = []
        for si in s:
            w = np.array([np.prod([(si - nodes[m]) / (nodes[l] - nodes[m]) for m in range(3) if m != l])
                          for l in range(3)])
            out.append(w @ vals)
        q1 = np.array([np.prod([(1.0 - nodes[m]) / (nodes[l] - nodes[m]) for m in range(3) if m != l])
                       for l in range(3)]) @ vals
        return np.array(out) - q1

    def step(self, u, h) -> StepOutput:
        if not h > 0:
            raise ValueError("step size must be positive")
        u = np.asarray(u, dtype=float)
        F = self.problem.rhs
        J = matrix_jacobian(self.problem, u)
        stats = StepStats(factorizations=1)
        try:
            solve = self._factorize(J, h)
        except (RuntimeError, np.linalg.LinAlgError, ValueError) as exc:
            raise StepFailure(f"singular Newton matrix: {exc}") from exc

        scale = 1.0 + np.abs(u)
        Z = self._guess(h)
        prev_norm = None
        converged = False
        for it in range(1, self.newton.max_iter + 1):
            FZ = np.array([F(u + Z[0]), F(u + Z[1])])
            if not np.all(np.isfinite(FZ)):
                raise StepFailure("non-finite right-hand side in Newton iteration")
            R = FZ - (self._Ainv @ Z) / h
            r1 = self._Tinv[0] @ R
            dW = solve(r1.astype(complex))
            dZ = 2.0 * np.real(np.outer(self._T[:, 0], dW))
            Z = Z + dZ
            stats.newton_iterations = it
            nrm = np.sqrt(np.mean((dZ / scale) ** 2))
            if nrm <= self.newton.tol or nrm <= _ROUNDOFF:
                converged = True
                break
            if prev_norm is not None:
                theta = nrm / prev_norm
                if theta >= 1.0:
                    raise StepFailure(f"Newton iteration diverges (rate {theta:.2f})")
                if theta / (1.0 - theta) * nrm <= self.newton.tol:
                    converged = True
                    break
            prev_norm = nrm
        if not converged:
            raise StepFailure(f"Newton did not converge in {self.newton.max_iter} iterations")
        self._prev = (Z, h)
        u_next = u + self._d @ Z
        return StepOutput(u_next, None, stats)

    def reset(self):
        self._prev = None


def step_gauss42(problem: OdeProblem, u, h, newton_cfg: NewtonConfig | None = None) -> StepOutput:
    """One Gauss-Legendre step in a fresh context (no Newton warm start)."""
    return GaussStepper(problem, newton_cfg).step(u, h)


def make_stepper(scheme, problem: OdeProblem, backend=None, krylov_config=None, newton=None):
    scheme = SchemeId.parse(scheme)
    if scheme is SchemeId.GAUSS42:
        return GaussStepper(problem, newton)
    return ExprbStepper(scheme, problem, backend, krylov_config)


# ---------------------------------------------------------------------------
# order conditions

@dataclass
class ConditionCheck:
    label: str
    lhs: float
    rhs: float
    residual: float
    passed: bool


@dataclass
class ConditionReport:
    scheme: str
    checks: list
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def _require_two_stages(tab):
    if tab.stages != 2:
        raise ValueError(f"{tab.name} has {tab.stages} stages; the checks cover 2-stage schemes")


def check_classical_conditions(tab: ReducedTableau, tol: float = 1e-12) -> ConditionReport:
    """Order-5 consistency conditions on c_2 and the Taylor coefficients of b_2."""
    _require_two_stages(tab)
    c2 = Fraction(tab.node(2))
    beta0, beta1 = tab.b_taylor(2, 1)
    rows = [
        ("beta0*c2^2/2! = 1/3!", beta0 * c2 ** 2 / 2, Fraction(1, 6)),
        ("beta0*c2^3/3! = 1/4!", beta0 * c2 ** 3 / 6, Fraction(1, 24)),
        ("beta1*c2^2/2! = 1/4!", beta1 * c2 ** 2 / 2, Fraction(1, 24)),
    ]
    checks = [ConditionCheck(lbl, float(l), float(r), float(l - r), abs(float(l - r)) <= tol)
              for lbl, l, r in rows]
    return ConditionReport(tab.name, checks, {"c2": c2, "beta0": beta0, "beta1": beta1})


def random_stable_matrix(rng, n, spread=50.0, perturbation=0.1):
    """Symmetric negative semidefinite matrix plus a small non-normal part."""
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    lam = -rng.uniform(0.0, spread, n)
    N = np.triu(rng.standard_normal((n, n)), 1)
    return (Q * lam) @ Q.T + perturbation * N


def check_stiff_conditions(tab: ReducedTableau, trials: int = 50, seed: int = 0,
                           tol: float = 1e-10) -> ConditionReport:
    """b_2(Z) c_2^2 = 2 phi_3(Z) on random matrices, and b_2(0) c_2^3 = 6 phi_4(0)."""
    _require_two_stages(tab)
    rng = np.random.default_rng(seed)
    c2 = Fraction(tab.node(2))
    coeffs = tab.b_coeffs[0]
    kmax = max(len(coeffs) - 1, 3)
    residuals = []
    for _ in range(trials):
        n = int(rng.integers(5, 31))
        table = phi_dense(kmax, random_stable_matrix(rng, n))
        b2 = sum(float(a) * table[k] for k, a in enumerate(coeffs) if a)
        target = 2.0 * table[3]
        r = np.linalg.norm(float(c2) ** 2 * b2 - target, np.inf) / max(1.0, np.linalg.norm(target, np.inf))
        residuals.append(float(r))
    worst = max(residuals) if residuals else 0.0
    b0 = tab.b_taylor(2, 0)[0]
    res_b = b0 * c2 ** 3 - Fraction(6, 24)
    checks = [
        ConditionCheck("b2(Z)*c2^2 = 2*phi3(Z)", worst, 0.0, worst, worst <= tol),
        ConditionCheck("b2(0)*c2^3 = 6*phi4(0)", float(b0 * c2 ** 3), 0.25, float(res_b),
                       abs(float(res_b)) <= tol),
    ]
    return ConditionReport(tab.name, checks, {"trial_residuals": residuals})


def stiff_taylor_mismatch(tab: ReducedTableau, power: int) -> Fraction:
    """Coefficient of z**power in b_2(z) c_2^2 - 2 phi_3(z), exactly."""
    c2 = Fraction(tab.node(2))
    return tab.b_taylor(2, power)[power] * c2 ** 2 - Fraction(2, math.factorial(power + 3))
