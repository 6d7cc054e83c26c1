import numpy as np
import pytest
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator

from exprb.model import (DENSE_THRESHOLD, NonFiniteError, OdeProblem, fd_jacobian, fd_jvp,
                         jacobian_operator, linearize, matrix_jacobian)
from exprb.phi import as_matvec


def cubic_problem(n=5, **kw):
    A = -np.diag(np.arange(1.0, n + 1))
    return OdeProblem("cubic", lambda u: A @ u - u ** 3, np.linspace(0.1, 1.0, n), (0.0, 1.0), **kw), A


def test_fd_jacobian_matches_analytic():
    prob, A = cubic_problem()
    u = prob.initial
    exact = A - np.diag(3 * u ** 2)
    J = fd_jacobian(prob, u)
    assert isinstance(J, np.ndarray)
    assert np.allclose(J, exact, atol=1e-6)


def test_fd_jacobian_large_is_matrix_free():
    n = DENSE_THRESHOLD + 1
    prob = OdeProblem("big", lambda u: -u ** 2, np.ones(n), (0.0, 1.0))
    J = fd_jacobian(prob, prob.initial)
    assert isinstance(J, LinearOperator)
    v = np.linspace(-1, 1, n)
    assert np.allclose(J.matvec(v), -2 * v, atol=1e-6)


def test_fd_jvp_zero_direction():
    u = np.ones(3)
    assert np.array_equal(fd_jvp(lambda x: x ** 2, u, np.zeros(3)), np.zeros(3))


def test_jacobian_priority_analytic_first():
    prob, A = cubic_problem(jacobian=lambda u: "analytic")
    assert jacobian_operator(prob, prob.initial) == "analytic"


def test_jacobian_from_split():
    n = 4
    A = sp.diags([-1.0, -2.0, -3.0, -4.0], format="csr")
    prob = OdeProblem("split", lambda u: A @ u + np.sin(u), np.ones(n), (0, 1),
                      linear=A, nonlinear=np.sin, nonlinear_jacobian=lambda u: sp.diags(np.cos(u)))
    J = jacobian_operator(prob, prob.initial)
    assert sp.issparse(J)
    assert np.allclose(J.toarray(), A.toarray() + np.diag(np.cos(np.ones(n))))
    assert prob.split_residual(prob.initial) < 1e-15


def test_jacobian_from_jvp_and_large_systems_stay_matrix_free():
    n = DENSE_THRESHOLD + 5
    d = -np.arange(1.0, n + 1)
    prob = OdeProblem("jvp", lambda u: d * u, np.ones(n), (0, 1),
                      jacobian=lambda u: sp.diags(d), jvp=lambda u, v: d * v)
    J = jacobian_operator(prob, prob.initial)
    assert isinstance(J, LinearOperator)
    assert np.allclose(J.matvec(np.ones(n)), d)
    # implicit solvers still get the explicit matrix
    assert sp.issparse(matrix_jacobian(prob, prob.initial))


def test_matrix_jacobian_falls_back_to_dense_fd():
    prob, A = cubic_problem(jvp=lambda u, v: A @ v - 3 * u ** 2 * v)
    J = matrix_jacobian(prob, prob.initial)
    assert isinstance(J, np.ndarray)
    assert np.allclose(J, A - np.diag(3 * prob.initial ** 2), atol=1e-6)


def test_linearization_delta_is_quadratic_remainder():
    prob, A = cubic_problem()
    lin = linearize(prob, prob.initial)
    e = 1e-3 * np.ones(prob.dim)
    D = lin.delta(prob.initial + e)
    # g_n(u + e) - g_n(u) = O(|e|^2) since g_n'(u_n) = 0
    assert np.max(np.abs(D)) < 1e-5
    assert np.allclose(lin.g(prob.initial), prob.rhs(prob.initial) - as_matvec(lin.operator)(prob.initial))


def test_linearize_validation():
    prob, _ = cubic_problem()
    with pytest.raises(ValueError):
        linearize(prob, np.ones(3))
    with pytest.raises(NonFiniteError):
        linearize(prob, np.full(prob.dim, np.nan))
    blow = OdeProblem("blow", lambda u: 1.0 / (u - 1.0), np.ones(2), (0, 1))
    with np.errstate(divide="ignore"):
        with pytest.raises(NonFiniteError):
            linearize(blow, blow.initial)


def test_problem_requires_complete_split():
    with pytest.raises(ValueError):
        OdeProblem("x", lambda u: u, np.ones(2), (0, 1), linear=np.eye(2))
