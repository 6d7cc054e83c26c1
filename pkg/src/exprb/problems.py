"""Benchmark problems: two nonstiff ODEs and two method-of-lines PDE systems."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .model import OdeProblem


# ---------------------------------------------------------------------------
# nonstiff

def two_body() -> OdeProblem:
    """Planar Kepler orbit ``y'' = -y / |y|^3`` with circular exact solution on [0, 10]."""

    def radius(y):
        r = np.hypot(y[0], y[1])
        if r == 0.0:
            raise ValueError("two-body right-hand side is singular at r = 0")
        return r

    def rhs(y):
        r3 = radius(y) ** 3
        return np.array([y[2], y[3], -y[0] / r3, -y[1] / r3])

    def jac(y):
        r = radius(y)
        r3, r5 = r ** 3, r ** 5
        a = -1.0 / r3 + 3.0 * y[0] ** 2 / r5
        b = 3.0 * y[0] * y[1] / r5
        d = -1.0 / r3 + 3.0 * y[1] ** 2 / r5
        return np.array([[0.0, 0.0, 1.0, 0.0],
                         [0.0, 0.0, 0.0, 1.0],
                         [a, b, 0.0, 0.0],
                         [b, d, 0.0, 0.0]])

    def exact(t):
        return np.array([np.cos(t), np.sin(t), -np.sin(t), np.cos(t)])

    return OdeProblem("two_body", rhs, exact(0.0), (0.0, 10.0), jacobian=jac, exact=exact)


def van_der_pol() -> OdeProblem:
    """``y1' = y2, y2' = (1 - y1^2) y2 - y1`` from (2, 0) on [0, 2]; no closed form."""

    def rhs(y):
        return np.array([y[1], (1.0 - y[0] ** 2) * y[1] - y[0]])

    def jac(y):
        return np.array([[0.0, 1.0], [-2.0 * y[0] * y[1] - 1.0, 1.0 - y[0] ** 2]])

    return OdeProblem("van_der_pol", rhs, np.array([2.0, 0.0]), (0.0, 2.0), jacobian=jac)


def riccati(t_end: float = 0.5) -> OdeProblem:
    """Scalar ``u' = u^2``, ``u(0) = 1``, exact ``1 / (1 - t)``."""
    return OdeProblem(
        "riccati", lambda u: u ** 2, np.array([1.0]), (0.0, t_end),
        jacobian=lambda u: np.array([[2.0 * u[0]]]),
        exact=lambda t: np.array([1.0 / (1.0 - t)]))


def linear(M, u0, t_span=(0.0, 1.0)) -> OdeProblem:
    """``u' = M u``; ``exact`` is left unset (use ``expm`` where needed)."""
    M = np.asarray(M, dtype=float)
    return OdeProblem("linear", lambda u: M @ u, np.asarray(u0, dtype=float), t_span,
                      jacobian=lambda u: M, linear=M, nonlinear=lambda u: np.zeros_like(u))


# ---------------------------------------------------------------------------
# grids

@dataclass(frozen=True)
class Grid1D:
    """Interior nodes ``x_i = i dx``, ``i = 1..M``, of [0, 1] with ``dx = 1/(M+1)``."""

    M: int = 199

    @property
    def dx(self) -> float:
        return 1.0 / (self.M + 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(1, self.M + 1) * self.dx


@dataclass(frozen=True)
class Grid2D:
    """``P x P`` nodes of the unit square including the boundary; state index ``i*P + j``."""

    P: int = 101

    @property
    def dx(self) -> float:
        return 1.0 / (self.P - 1)

    @property
    def size(self) -> int:
        return self.P * self.P

    def index(self, i, j):
        return i * self.P + j

    def mesh(self):
        """x varies with the first index, y with the second (flattened C-order)."""
        x = np.arange(self.P) * self.dx
        return np.meshgrid(x, x, indexing="ij")


def dirichlet_laplacian_1d(grid: Grid1D):
    e = np.ones(grid.M)
    return sp.diags([e[:-1], -2.0 * e, e[:-1]], [-1, 0, 1], format="csr") / grid.dx ** 2


def neumann_second_difference(P, dx):
    """Three-point ``u_xx`` with mirrored ghost values ``u_{-1} = u_1``."""
    D = sp.diags([np.ones(P - 1), -2.0 * np.ones(P), np.ones(P - 1)], [-1, 0, 1], format="lil")
    D[0, 1] = 2.0
    D[P - 1, P - 2] = 2.0
    return D.tocsr() / dx ** 2


def neumann_first_difference(P, dx):
    """Central ``u_x``; mirrored ghosts make the boundary rows vanish."""
    D = sp.diags([-np.ones(P - 1), np.ones(P - 1)], [-1, 1], format="lil")
    D[0, 1] = 0.0
    D[P - 1, P - 2] = 0.0
    return D.tocsr() / (2.0 * dx)


# ---------------------------------------------------------------------------
# stiff

def semilinear_parabolic_1d(M: int = 199) -> OdeProblem:
    r"""``u_t = u_xx + 1/(1+u^2) + Phi(x, t)`` on [0, 1] x [0, 1], zero Dirichlet data.

    ``Phi`` is fixed by the exact solution ``u = x(1-x)e^t``:

        Phi = x(1-x)e^t + 2e^t - 1/(1 + (x(1-x)e^t)^2).

    The central second difference is exact on quadratics, so the nodal values of
    that solution also solve the semi-discrete system exactly. Time is appended
    as the last state component (``t' = 1``) to make the system autonomous.
    """
    grid = Grid1D(M)
    x = grid.nodes
    q = x * (1.0 - x)
    L = dirichlet_laplacian_1d(grid)
    n = M + 1
    A = sp.block_diag([L, sp.csr_matrix((1, 1))], format="csr")

    def source(t):
        et = np.exp(t)
        w = q * et
        return w + 2.0 * et - 1.0 / (1.0 + w * w)

    def source_dt(t):
        et = np.exp(t)
        w = q * et
        return w + 2.0 * et + 2.0 * w * w / (1.0 + w * w) ** 2

    def g(y):
        u, t = y[:-1], y[-1]
        return np.concatenate((1.0 / (1.0 + u * u) + source(t), [1.0]))

    def dg(y):
        u, t = y[:-1], y[-1]
        diag = np.append(-2.0 * u / (1.0 + u * u) ** 2, 0.0)
        col = np.append(source_dt(t), 0.0)
        rows = np.arange(n)
        return (sp.diags(diag, format="csr")
                + sp.csr_matrix((col, (rows, np.full(n, n - 1))), shape=(n, n)))

    def rhs(y):
        return A @ y + g(y)

    def exact(t):
        return np.append(q * np.exp(t), t)

    prob = OdeProblem("parabolic_1d", rhs, exact(0.0), (0.0, 1.0),
                      jacobian=lambda y: (A + dg(y)).tocsr(),
                      linear=A, nonlinear=g, nonlinear_jacobian=dg, exact=exact)
    prob.grid = grid
    prob.pde_operator = L
    return prob


def adr_2d(P: int = 101) -> OdeProblem:
    """``u_t = 0.01 lap(u) + 10 (u_x + u_y) + 100 u (u - 1/2)(1 - u)`` on the unit square.

    Homogeneous Neumann data through ghost mirroring, central differences for
    both derivative terms, ``u(x, y, 0) = 0.3 + 256 (x(1-x) y(1-y))^2``, T = 0.08.
    """
    grid = Grid2D(P)
    dx = grid.dx
    I = sp.identity(P, format="csr")
    D2 = neumann_second_difference(P, dx)
    D1 = neumann_first_difference(P, dx)
    lap = sp.kron(D2, I) + sp.kron(I, D2)
    grad = sp.kron(D1, I) + sp.kron(I, D1)
    A = (0.01 * lap + 10.0 * grad).tocsr()

    def g(u):
        return 100.0 * u * (u - 0.5) * (1.0 - u)

    def dg_diag(u):
        return 100.0 * (-3.0 * u * u + 3.0 * u - 0.5)

    def rhs(u):
        return A @ u + g(u)

    X, Y = grid.mesh()
    u0 = (0.3 + 256.0 * (X * (1 - X) * Y * (1 - Y)) ** 2).ravel()

    prob = OdeProblem("adr_2d", rhs, u0, (0.0, 0.08),
                      jacobian=lambda u: (A + sp.diags(dg_diag(u))).tocsr(),
                      jvp=lambda u, v: A @ v + dg_diag(u) * v,
                      linear=A, nonlinear=g,
                      nonlinear_jacobian=lambda u: sp.diags(dg_diag(u), format="csr"))
    prob.grid = grid
    prob.laplacian = lap.tocsr()
    return prob


PROBLEMS = {
    "two_body": two_body,
    "van_der_pol": van_der_pol,
    "parabolic_1d": semilinear_parabolic_1d,
    "adr_2d": adr_2d,
}
ALIASES = {"ex1": "two_body", "ex2": "van_der_pol", "ex3": "parabolic_1d", "ex4": "adr_2d"}


def get_problem(name: str) -> OdeProblem:
    key = ALIASES.get(name.lower(), name.lower())
    if key not in PROBLEMS:
        raise KeyError(f"unknown problem {name!r}; known: {sorted(PROBLEMS)} or {sorted(ALIASES)}")
    return PROBLEMS[key]()
