"""Fixed-step and embedded-error adaptive time stepping."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .integrators import SchemeId, StepFailure, make_stepper
from .model import NonFiniteError, OdeProblem
from .phi import KrylovConvergenceError

#: per-step failures the adaptive driver answers with a smaller step
RECOVERABLE = (StepFailure, NonFiniteError, KrylovConvergenceError)


class IntegrationError(RuntimeError):
    """Integration could not reach the final time.

    ``step_index`` and ``t`` locate the failure; ``partial`` holds the
    :class:`IntegrationResult` accumulated so far (``None`` for fixed steps).
    """

    def __init__(self, message, step_index=None, t=None, partial=None):
        super().__init__(message)
        self.step_index = step_index
        self.t = t
        self.partial = partial


@dataclass
class ControllerConfig:
    """Constants of the embedded-error step-size controller.

    ``norm`` selects the weighted norm used for control: ``"rms"`` (default)
    or ``"max"``.
    """

    atol: float = 1e-6
    rtol: float = 1e-6
    safety: float = 0.9
    facmin: float = 0.2
    facmax: float = 5.0
    h_init: Optional[float] = None
    h_min: float = 1e-12
    h_max: float = np.inf
    embedded_order: int = 2
    max_rejections: int = 20
    norm: str = "rms"

    def __post_init__(self):
        if not (self.atol > 0 and self.rtol > 0):
            raise ValueError("atol and rtol must be positive")
        if not (0 < self.facmin < 1 < self.facmax):
            raise ValueError("need 0 < facmin < 1 < facmax")
        if not 0 < self.safety <= 1:
            raise ValueError("safety factor must lie in (0, 1]")
        if self.embedded_order < 1:
            raise ValueError("embedded_order must be >= 1")
        if not 0 < self.h_min < self.h_max:
            raise ValueError("need 0 < h_min < h_max")
        if self.h_init is not None and not self.h_init > 0:
            raise ValueError("h_init must be positive")
        if self.norm not in ("rms", "max"):
            raise ValueError("norm must be 'rms' or 'max'")


@dataclass
class IntegrationResult:
    t_final: float
    u_final: np.ndarray
    trajectory: Optional[list] = None
    n_accepted: int = 0
    n_rejected: int = 0
    step_sizes: list = field(default_factory=list)
    total_matvecs: int = 0
    wall_time_seconds: float = 0.0
    # scaled error estimates of the accepted steps, in both norms
    error_estimates: list = field(default_factory=list)
    max_krylov_basis: int = 0
    newton_iterations: int = 0


def error_max_norm(u, ref) -> float:
    u, ref = np.asarray(u, dtype=float), np.asarray(ref, dtype=float)
    if u.shape != ref.shape:
        raise ValueError(f"shape mismatch: {u.shape} vs {ref.shape}")
    return float(np.max(np.abs(u - ref))) if u.size else 0.0


def scaled_error(err_vec, u, u_next, atol, rtol, norm="rms") -> float:
    """Norm of ``err_i / (atol + rtol * max(|u_i|, |u_next_i|))``."""
    w = np.abs(err_vec) / (atol + rtol * np.maximum(np.abs(u), np.abs(u_next)))
    if norm == "max":
        return float(np.max(w))
    return float(np.sqrt(np.mean(w * w)))


def _record(res: IntegrationResult, out):
    st = out.stats
    res.total_matvecs += st.matvecs
    res.max_krylov_basis = max(res.max_krylov_basis, st.max_basis)
    res.newton_iterations += st.newton_iterations


def integrate_fixed(problem: OdeProblem, scheme, N: int, *, backend=None, krylov_config=None,
                    newton=None, save_trajectory: bool = False) -> IntegrationResult:
    """``N`` equal steps over ``problem.t_span``, re-linearizing at every step."""
    if int(N) != N or N < 1:
        raise ValueError("N must be a positive integer")
    N = int(N)
    t0, T = problem.t_span
    h = (T - t0) / N
    stepper = make_stepper(scheme, problem, backend, krylov_config, newton)
    u = problem.initial.copy()
    res = IntegrationResult(t0, u, [(t0, u.copy())] if save_trajectory else None)
    start = time.perf_counter()
    for n in range(N):
        try:
            out = stepper.step(u, h)
        except RECOVERABLE as exc:
            raise IntegrationError(f"step {n} failed at t = {t0 + n * h:.6g}: {exc}",
                                   step_index=n, t=t0 + n * h) from exc
        u = out.u_next
        if not np.all(np.isfinite(u)):
            raise IntegrationError(f"non-finite state after step {n}", step_index=n, t=t0 + (n + 1) * h)
        _record(res, out)
        res.step_sizes.append(h)
        if save_trajectory:
            res.trajectory.append((t0 + (n + 1) * h, u.copy()))
    res.wall_time_seconds = time.perf_counter() - start
    res.t_final, res.u_final, res.n_accepted = T, u, N
    return res


def initial_step(problem: OdeProblem, order: int, atol: float, rtol: float) -> float:
    """Automatic first step from the sizes of ``u0``, ``F(u0)`` and a difference of ``F``."""
    u0 = problem.initial
    f0 = problem.rhs(u0)
    sc = atol + rtol * np.abs(u0)

    def rms(v):
        return np.sqrt(np.mean((v / sc) ** 2))

    d0, d1 = rms(u0), rms(f0)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    d2 = rms(problem.rhs(u0 + h0 * f0) - f0) / h0
    big = max(d1, d2)
    h1 = max(1e-6, h0 * 1e-3) if big <= 1e-15 else (0.01 / big) ** (1.0 / (order + 1))
    return min(100.0 * h0, h1)


def integrate_adaptive(problem: OdeProblem, scheme, cfg: ControllerConfig, *, backend=None,
                       krylov_config=None, save_trajectory: bool = False) -> IntegrationResult:
    """Embedded-error step-size control over ``problem.t_span``.

    A step is accepted when its scaled error estimate is at most 1. The next
    step is ``h * min(facmax, max(facmin, safety * err**(-1/(q+1))))``; a zero
    estimate grows the step by ``facmax``. A step whose evaluation fails
    (Krylov or non-finite values) counts as a rejection with factor ``facmin``.
    """
    scheme = SchemeId.parse(scheme)
    stepper = make_stepper(scheme, problem, backend, krylov_config)
    if getattr(stepper, "embedded_order", None) is None:
        raise ValueError(f"{scheme.label} has no embedded error estimate")
    t0, T = problem.t_span
    span = T - t0
    u = problem.initial.copy()
    res = IntegrationResult(t0, u, [(t0, u.copy())] if save_trajectory else None)
    h = cfg.h_init if cfg.h_init is not None else initial_step(problem, stepper.order, cfg.atol, cfg.rtol)
    h = min(h, cfg.h_max, span)
    expo = -1.0 / (cfg.embedded_order + 1)
    t = t0
    rejected_in_row = 0
    start = time.perf_counter()
    # relative slack so the last step is not split into a sliver
    while T - t > 1e-12 * max(1.0, abs(T)):
        if h < cfg.h_min:
            res.wall_time_seconds = time.perf_counter() - start
            res.t_final, res.u_final = t, u
            raise IntegrationError(f"step size {h:.3e} below h_min at t = {t:.6g}",
                                   step_index=res.n_accepted, t=t, partial=res)
        h_try = min(h, T - t)
        try:
            out = stepper.step(u, h_try)
            err_vec = out.err_vec
            err = scaled_error(err_vec, u, out.u_next, cfg.atol, cfg.rtol, cfg.norm)
            if not np.isfinite(err):
                raise StepFailure("non-finite error estimate")
            fac = cfg.facmax if err == 0.0 else min(cfg.facmax, max(cfg.facmin, cfg.safety * err ** expo))
        except RECOVERABLE:
            out, err, fac = None, np.inf, cfg.facmin
        if out is not None:
            _record(res, out)
        if err <= 1.0:
            other = "max" if cfg.norm == "rms" else "rms"
            res.error_estimates.append({cfg.norm: err, other: scaled_error(
                err_vec, u, out.u_next, cfg.atol, cfg.rtol, other)})
            t = T if h_try == T - t else t + h_try
            u = out.u_next
            res.n_accepted += 1
            res.step_sizes.append(h_try)
            if save_trajectory:
                res.trajectory.append((t, u.copy()))
            rejected_in_row = 0
            h = min(cfg.h_max, h_try * fac)
        else:
            res.n_rejected += 1
            rejected_in_row += 1
            if rejected_in_row > cfg.max_rejections:
                res.wall_time_seconds = time.perf_counter() - start
                res.t_final, res.u_final = t, u
                raise IntegrationError(f"{rejected_in_row} consecutive rejections at t = {t:.6g}",
                                       step_index=res.n_accepted, t=t, partial=res)
            # never grow after a rejection
            h = h_try * min(1.0, fac)
    res.wall_time_seconds = time.perf_counter() - start
    res.t_final, res.u_final = T, u
    return res
