from fractions import Fraction

import numpy as np
import pytest
import scipy.sparse as sp
import sympy
from scipy.linalg import expm

from exprb.integrators import (GAUSS_A, GAUSS_B, GAUSS_C, ExprbStepper, GaussStepper,
                               NewtonConfig, ReducedTableau, SchemeId, StepFailure,
                               check_classical_conditions, check_stiff_conditions, make_stepper,
                               random_stable_matrix, step_exprb_generic, step_gauss42,
                               stiff_taylor_mismatch, tableau_of)
from exprb.model import OdeProblem, linearize
from exprb.phi import DenseBackend, KrylovBackend, KrylovConfig
from exprb.problems import linear, riccati, semilinear_parabolic_1d, two_body

EXPONENTIAL = [s for s in SchemeId if s.is_exponential]


def sympy_phi_series(k, z, order):
    """Truncated series of phi_k from its closed form (independent of the tableau code)."""
    expr = (sympy.exp(z) - sum(z ** j / sympy.factorial(j) for j in range(k))) / z ** k
    return sympy.series(expr, z, 0, order + 1).removeO()


# ---------------------------------------------------------------------------
# oracles: exact series

def test_b2_series_oracle_and_mismatch_exprb42n():
    z = sympy.symbols("z")
    b2 = -sympy.Rational(8, 27) * sympy_phi_series(1, z, 4) + sympy.Rational(48, 27) * sympy_phi_series(2, z, 4)
    diff = sympy.expand(b2 * sympy.Rational(9, 16) - 2 * sympy_phi_series(3, z, 4))
    tab = tableau_of("exprb42n")
    for p in range(3):
        assert stiff_taylor_mismatch(tab, p) == Fraction(str(diff.coeff(z, p)))
    assert stiff_taylor_mismatch(tab, 0) == 0 and stiff_taylor_mismatch(tab, 1) == 0
    assert stiff_taylor_mismatch(tab, 2) == Fraction(-1, 360)


def test_b2_taylor_coefficients_match_series():
    z = sympy.symbols("z")
    tab = tableau_of("exprb42")
    series = sympy.expand(sympy.Rational(32, 9) * sympy_phi_series(3, z, 3))
    assert tab.b_taylor(2, 3) == [Fraction(str(series.coeff(z, j))) for j in range(4)]


# ---------------------------------------------------------------------------
# tableaus and conditions

def test_tableau_coefficients():
    assert tableau_of("exprb42").b_coeffs[0] == (0, 0, 0, Fraction(32, 9))
    assert tableau_of("exprb42n").b_coeffs[0] == (0, Fraction(-8, 27), Fraction(48, 27))
    assert tableau_of("exprb42").node(2) == Fraction(3, 4)
    assert tableau_of("exprb32").b_coeffs[0] == (0, 0, 0, 2)
    euler = tableau_of("exprb_euler")
    assert euler.stages == 1 and euler.b_hat_coeffs is None


def test_tableau_validation():
    with pytest.raises(ValueError):
        ReducedTableau("bad", (Fraction(1, 2),), (), order=2)
    with pytest.raises(ValueError):
        tableau_of("gauss42")


@pytest.mark.parametrize("text,expected", [("exprb42N", SchemeId.EXPRB42N), ("Gauss42", SchemeId.GAUSS42),
                                           ("exprb-euler", SchemeId.EXPRB_EULER)])
def test_scheme_parse(text, expected):
    assert SchemeId.parse(text) is expected


def test_scheme_parse_unknown():
    with pytest.raises(ValueError):
        SchemeId.parse("rk4")


@pytest.mark.parametrize("scheme", ["exprb42", "exprb42n"])
def test_classical_conditions(scheme):
    rep = check_classical_conditions(tableau_of(scheme))
    assert rep.passed
    assert rep.details["beta0"] == Fraction(16, 27) and rep.details["beta1"] == Fraction(4, 27)


def test_stiff_conditions_exprb42_hold():
    rep = check_stiff_conditions(tableau_of("exprb42"), trials=20)
    assert rep.passed
    assert max(rep.details["trial_residuals"]) < 1e-12


def test_stiff_conditions_exprb42n_fail():
    rep = check_stiff_conditions(tableau_of("exprb42n"), trials=10)
    assert not rep.checks[0].passed
    assert min(rep.details["trial_residuals"]) > 1e-6
    # the scalar condition at Z = 0 still holds
    assert rep.checks[1].passed


def test_random_stable_matrix_is_dissipative():
    M = random_stable_matrix(np.random.default_rng(0), 20)
    assert np.max(np.linalg.eigvals(M).real) < 1.0


# ---------------------------------------------------------------------------
# exponential steps

@pytest.mark.parametrize("scheme", EXPONENTIAL)
@pytest.mark.parametrize("backend", [DenseBackend(), KrylovBackend(KrylovConfig(tol=1e-13))])
def test_linear_problems_are_solved_exactly(scheme, backend):
    rng = np.random.default_rng(2)
    M = random_stable_matrix(rng, 30)
    u0 = rng.standard_normal(30)
    out = ExprbStepper(scheme, linear(M, u0), backend).step(u0, 0.2)
    exact = expm(0.2 * M) @ u0
    assert np.linalg.norm(out.u_next - exact) <= 1e-11 * np.linalg.norm(exact)


def _local_error(scheme, h):
    p = riccati()
    u1 = make_stepper(scheme, p).step(p.initial, h).u_next
    return abs(u1[0] - p.exact(h)[0])


@pytest.mark.parametrize("scheme,order", [("exprb42", 5), ("exprb42n", 5), ("exprb32", 4), ("exprb_euler", 3)])
def test_local_order_riccati(scheme, order):
    e1, e2 = _local_error(scheme, 0.02), _local_error(scheme, 0.01)
    assert abs(np.log2(e1 / e2) - order) < 0.4


def test_embedded_solution_is_exponential_euler():
    p = two_body()
    u = p.initial
    out = make_stepper("exprb42", p).step(u, 0.1)
    euler = make_stepper("exprb_euler", p).step(u, 0.1).u_next
    assert np.allclose(out.u_hat, euler, rtol=1e-13, atol=1e-15)
    assert np.allclose(out.err_vec, out.u_next - euler)


def test_dense_and_krylov_steps_agree_on_stiff_problem():
    p = semilinear_parabolic_1d(M=39)
    u = p.initial
    a = ExprbStepper("exprb42", p, DenseBackend()).step(u, 0.05).u_next
    b = ExprbStepper("exprb42", p, KrylovBackend()).step(u, 0.05).u_next
    assert np.max(np.abs(a - b)) < 1e-11


def test_step_statistics_and_errors():
    p = semilinear_parabolic_1d(M=39)
    out = ExprbStepper("exprb42", p, KrylovBackend()).step(p.initial, 0.05)
    assert out.stats.matvecs > 0 and out.stats.phi_calls == 2
    with pytest.raises(ValueError):
        step_exprb_generic(tableau_of("exprb42"), linearize(p, p.initial), 0.0, DenseBackend())


def test_non_finite_stage_raises_step_failure():
    # finite at u0 = 1 but infinite at the stage value
    p = OdeProblem("pole", lambda u: np.where(u > 1.05, np.inf, u ** 2), np.ones(1), (0, 1),
                   jacobian=lambda u: np.array([[2 * u[0]]]))
    with pytest.raises(StepFailure):
        make_stepper("exprb42", p).step(p.initial, 0.5)


# ---------------------------------------------------------------------------
# Gauss-Legendre

def test_gauss_tableau_order_conditions():
    A, b, c = GAUSS_A, GAUSS_B, GAUSS_C
    assert np.allclose(A.sum(axis=1), c)
    conditions = [
        (b.sum(), 1), (b @ c, 1 / 2), (b @ c ** 2, 1 / 3), (b @ A @ c, 1 / 6),
        (b @ c ** 3, 1 / 4), (b @ (c * (A @ c)), 1 / 8), (b @ A @ c ** 2, 1 / 12), (b @ A @ A @ c, 1 / 24),
    ]
    for lhs, rhs in conditions:
        assert lhs == pytest.approx(rhs, abs=1e-15)
    assert np.allclose(np.sort_complex(np.linalg.eigvals(np.linalg.inv(A))), [3 - 1j * np.sqrt(3), 3 + 1j * np.sqrt(3)])


def test_gauss_stability_function():
    p = linear([[-1.0]], [1.0])
    assert step_gauss42(p, np.array([1.0]), 1.0).u_next[0] == pytest.approx(7 / 19, abs=1e-14)
    z = -30.0
    R = (1 + z / 2 + z ** 2 / 12) / (1 - z / 2 + z ** 2 / 12)
    assert step_gauss42(linear([[z]], [1.0]), np.array([1.0]), 1.0).u_next[0] == pytest.approx(R, abs=1e-14)


def test_gauss_zero_field():
    p = OdeProblem("zero", lambda u: np.zeros_like(u), np.ones(3), (0, 1), jacobian=lambda u: np.zeros((3, 3)))
    assert np.array_equal(step_gauss42(p, p.initial, 0.3).u_next, p.initial)


def test_gauss_sparse_and_dense_jacobians_agree():
    p = semilinear_parabolic_1d(M=29)
    dense = OdeProblem("dense", p.rhs, p.initial, p.t_span, jacobian=lambda u: p.jacobian(u).toarray())
    a = GaussStepper(p).step(p.initial, 0.05).u_next
    b = GaussStepper(dense).step(p.initial, 0.05).u_next
    assert np.max(np.abs(a - b)) < 1e-12
    assert sp.issparse(p.jacobian(p.initial))


def test_gauss_order_four_two_body():
    p = two_body()
    errs = []
    for N in (100, 200):
        st = make_stepper("gauss42", p)
        u = p.initial
        for _ in range(N):
            u = st.step(u, 10 / N).u_next
        errs.append(np.max(np.abs(u - p.exact(10.0))))
    assert abs(np.log2(errs[0] / errs[1]) - 4) < 0.2


def test_gauss_newton_failure_is_reported():
    p = riccati()
    with pytest.raises(StepFailure):
        GaussStepper(p, NewtonConfig(tol=1e-16, max_iter=1)).step(p.initial, 0.3)


def test_gauss_warm_start_reduces_iterations():
    p = two_body()
    st = GaussStepper(p)
    first = st.step(p.initial, 0.05)
    second = st.step(first.u_next, 0.05)
    st.reset()
    cold = st.step(first.u_next, 0.05)
    assert second.stats.newton_iterations <= cold.stats.newton_iterations
    assert np.allclose(second.u_next, cold.u_next, atol=1e-12)
