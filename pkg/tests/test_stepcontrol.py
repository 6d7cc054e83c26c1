import numpy as np
import pytest
from scipy.linalg import expm

from exprb.integrators import random_stable_matrix
from exprb.model import OdeProblem
from exprb.problems import linear, riccati, two_body
from exprb.stepcontrol import (ControllerConfig, IntegrationError, error_max_norm, initial_step,
                               integrate_adaptive, integrate_fixed, scaled_error)


def test_error_max_norm():
    assert error_max_norm([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert error_max_norm([0.0, -3.0, 1.0], [0.0, 0.0, 0.0]) == 3.0
    with pytest.raises(ValueError):
        error_max_norm([1.0], [1.0, 2.0])


def test_scaled_error_norms():
    e = np.array([1e-6, 3e-6])
    u = np.zeros(2)
    assert scaled_error(e, u, u, 1e-6, 1e-6, "max") == pytest.approx(3.0)
    assert scaled_error(e, u, u, 1e-6, 1e-6, "rms") == pytest.approx(np.sqrt(5.0))
    # the larger of |u_n| and |u_{n+1}| sets the weight
    assert scaled_error(e, np.array([0.0, 2.0]), np.array([1.0, 0.0]), 1e-6, 1e-6, "max") == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# fixed steps

def test_fixed_single_step_linear_is_exact():
    rng = np.random.default_rng(0)
    M = random_stable_matrix(rng, 20)
    u0 = rng.standard_normal(20)
    res = integrate_fixed(linear(M, u0, (0.0, 0.5)), "exprb42", 1)
    assert np.allclose(res.u_final, expm(0.5 * M) @ u0, rtol=1e-12, atol=1e-14)
    assert res.n_accepted == 1 and res.t_final == 0.5


def test_fixed_steps_are_deterministic():
    p = two_body()
    a = integrate_fixed(p, "exprb42n", 40, save_trajectory=True)
    b = integrate_fixed(p, "exprb42n", 40)
    assert np.array_equal(a.u_final, b.u_final)
    assert len(a.step_sizes) == a.n_accepted == 40
    assert len(a.trajectory) == 41 and a.trajectory[-1][0] == pytest.approx(10.0)


def test_fixed_fourth_order_on_two_body():
    p = two_body()
    e = [error_max_norm(integrate_fixed(p, "gauss42", N).u_final, p.exact(10.0)) for N in (64, 128)]
    assert e[1] < e[0] / 10


@pytest.mark.parametrize("N", [0, -3, 2.5])
def test_fixed_rejects_bad_N(N):
    with pytest.raises(ValueError):
        integrate_fixed(riccati(), "exprb42", N)


def test_fixed_failure_reports_step_index():
    p = OdeProblem("cliff", lambda u: np.where(u > 1.5, np.nan, u ** 2), np.ones(1), (0.0, 0.9),
                   jacobian=lambda u: np.array([[2 * u[0]]]))
    with pytest.raises(IntegrationError) as info:
        integrate_fixed(p, "exprb42", 10)
    assert info.value.step_index is not None and info.value.step_index > 0


# ---------------------------------------------------------------------------
# adaptive

@pytest.mark.parametrize("kw", [dict(atol=0.0), dict(rtol=-1.0), dict(facmin=1.2), dict(facmax=0.9),
                                dict(h_min=0.0), dict(norm="l1"), dict(h_init=-1.0), dict(safety=1.5)])
def test_controller_config_validation(kw):
    with pytest.raises(ValueError):
        ControllerConfig(**kw)


def test_zero_field_grows_by_facmax_until_h_max():
    p = OdeProblem("zero", lambda u: np.zeros_like(u), np.ones(2), (0.0, 1.0),
                   jacobian=lambda u: np.zeros((2, 2)))
    res = integrate_adaptive(p, "exprb42", ControllerConfig(h_init=1e-3, h_max=0.1))
    assert res.n_rejected == 0
    assert res.step_sizes[:4] == pytest.approx([1e-3, 5e-3, 2.5e-2, 0.1])
    assert max(res.step_sizes) == pytest.approx(0.1)
    assert res.t_final == 1.0 and sum(res.step_sizes) == pytest.approx(1.0)


def test_adaptive_accepts_only_small_estimates_and_reaches_T():
    p = two_body()
    res = integrate_adaptive(p, "exprb42", ControllerConfig(atol=1e-6, rtol=1e-6), save_trajectory=True)
    assert res.t_final == 10.0 and sum(res.step_sizes) == pytest.approx(10.0)
    assert all(e["rms"] <= 1.0 for e in res.error_estimates)
    assert len(res.error_estimates) == res.n_accepted == len(res.trajectory) - 1
    assert error_max_norm(res.u_final, p.exact(10.0)) < 1e-4


def test_max_norm_control_is_stricter():
    p = two_body()
    rms = integrate_adaptive(p, "exprb42", ControllerConfig(atol=1e-5, rtol=1e-5))
    mx = integrate_adaptive(p, "exprb42", ControllerConfig(atol=1e-5, rtol=1e-5, norm="max"))
    assert mx.n_accepted >= rms.n_accepted
    assert all(e["max"] <= 1.0 for e in mx.error_estimates)


def test_step_count_scales_with_embedded_order():
    p = two_body()
    tols = [1e-4, 1e-6]
    steps = [integrate_adaptive(p, "exprb42n", ControllerConfig(atol=t, rtol=t)).n_accepted for t in tols]
    slope = np.log(steps[1] / steps[0]) / np.log(tols[0] / tols[1])
    assert abs(slope - 1 / 3) <= 0.3 / 3


def test_tighter_tolerance_gives_smaller_error():
    p = riccati(0.9)
    errs = [error_max_norm(integrate_adaptive(p, "exprb42", ControllerConfig(atol=t, rtol=t)).u_final,
                           p.exact(0.9)) for t in (1e-4, 1e-6, 1e-8)]
    assert errs[0] > errs[1] > errs[2]


@pytest.mark.parametrize("scheme", ["gauss42", "exprb_euler"])
def test_adaptive_needs_embedded_estimate(scheme):
    with pytest.raises(ValueError):
        integrate_adaptive(riccati(), scheme, ControllerConfig())


def _always_failing():
    return OdeProblem("fail", lambda u: np.where(u == 1.0, 1.0, np.nan), np.ones(1), (0.0, 1.0),
                      jacobian=lambda u: np.zeros((1, 1)))


def test_persistent_rejection_fails():
    cfg = ControllerConfig(h_init=0.5, h_min=1e-300)
    with pytest.raises(IntegrationError, match="consecutive rejections") as info:
        integrate_adaptive(_always_failing(), "exprb42", cfg)
    assert info.value.partial.n_rejected == cfg.max_rejections + 1


def test_step_below_h_min_fails():
    with pytest.raises(IntegrationError, match="h_min") as info:
        integrate_adaptive(_always_failing(), "exprb42", ControllerConfig(h_init=0.5, h_min=1e-2))
    assert info.value.t == 0.0


def test_initial_step_heuristic_is_reasonable():
    h = initial_step(two_body(), 4, 1e-6, 1e-6)
    assert 1e-4 < h < 1.0
