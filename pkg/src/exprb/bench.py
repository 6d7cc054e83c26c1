"""Benchmark harness: convergence tables, tolerance sweeps, step-size traces, self-tests.

Every experiment produces a list of flat dataclass rows. :func:`write_csv`
stores them with a one-line header in field order and :func:`read_csv` parses
them back exactly. :func:`write_manifest` stores a JSON description of the run
next to the CSV.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Optional

import numpy as np
import scipy
from scipy.linalg import expm

from . import __version__
from .integrators import (GaussStepper, SchemeId, check_classical_conditions,
                          check_stiff_conditions, make_stepper, random_stable_matrix,
                          stiff_taylor_mismatch, tableau_of)
from .phi import MAX_PHI_INDEX, phi_dense, phi_scalar
from .problems import get_problem, linear
from .reference import canonical_name, reference_solution
from .stepcontrol import (ControllerConfig, IntegrationError, error_max_norm,
                          integrate_adaptive, integrate_fixed)
from .testing import phi_quadrature_oracle

MODES = ("fixed-convergence", "adaptive-sweep", "stepsize-trace", "order-check", "phi-selftest")
#: tolerances 1e-4, 1e-4.5, ..., 1e-6
DEFAULT_SWEEP = tuple(10.0 ** -e for e in np.arange(4.0, 6.01, 0.5))
DEFAULT_N = {
    "two_body": (64, 128, 256, 512),
    "van_der_pol": (64, 128, 256, 512),
    "parabolic_1d": (16, 32, 64, 128, 256),
    "adr_2d": (32, 64, 128, 256, 512),
}
DEFAULT_SCHEMES = ("exprb42", "exprb42n", "gauss42")


@dataclass
class ExperimentSpec:
    problem: str
    schemes: tuple = DEFAULT_SCHEMES
    mode: str = "fixed-convergence"
    N: Optional[tuple] = None
    tol: Optional[tuple] = None
    out: Optional[str] = None
    jobs: int = 1
    cache_dir: Optional[str] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        self.schemes = tuple(SchemeId.parse(s).value for s in self.schemes)
        if self.N is not None:
            self.N = tuple(int(n) for n in self.N)
            if any(n < 1 for n in self.N) or any(b <= a for a, b in zip(self.N, self.N[1:])):
                raise ValueError("N values must be positive and strictly increasing")
        if self.tol is not None:
            self.tol = tuple(float(t) for t in self.tol)
            if any(t <= 0 for t in self.tol) or any(b >= a for a, b in zip(self.tol, self.tol[1:])):
                raise ValueError("tolerances must be positive and strictly decreasing")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")

    def as_dict(self):
        return dataclasses.asdict(self)


@dataclass
class ConvergenceRow:
    scheme: str
    N: int
    h: float
    error: float
    order: Optional[float]
    wall_seconds: float
    matvecs: int
    status: str = "ok"


@dataclass
class SweepRow:
    scheme: str
    tol: float
    n_accepted: int
    n_rejected: int
    error: float
    wall_seconds: float
    matvecs: int
    # largest accepted scaled error estimate in each norm
    est_rms: float
    est_max: float
    status: str = "ok"


@dataclass
class TraceRow:
    step: int
    t: float
    h: float


@dataclass
class CheckRow:
    name: str
    passed: bool
    value: float
    detail: str = ""


# ---------------------------------------------------------------------------
# csv / manifest

def _parse(value: str, tp):
    tp = str(tp)
    if value == "" and "Optional" in tp:
        return None
    if "bool" in tp:
        return value == "True"
    if "int" in tp:
        return int(value)
    if "float" in tp:
        return float(value)
    return value


def _format(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(rows, path):
    if not rows:
        raise ValueError("nothing to write")
    names = [f.name for f in dataclasses.fields(rows[0])]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for r in rows:
            w.writerow([_format(getattr(r, n)) for n in names])
    return path


def read_csv(path, row_type):
    fields = {f.name: f.type for f in dataclasses.fields(row_type)}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != list(fields):
            raise ValueError(f"header {header} does not match {row_type.__name__}")
        return [row_type(**{n: _parse(v, fields[n]) for n, v in zip(header, line)}) for line in reader]


def write_manifest(spec: ExperimentSpec, csv_path, extra=None):
    manifest = {
        "spec": spec.as_dict(),
        "csv": str(csv_path),
        "library_version": __version__,
        "seed": 0,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    manifest.update(extra or {})
    path = Path(csv_path).with_suffix(".json")
    path.write_text(json.dumps(manifest, indent=2, default=str))
    return path


# ---------------------------------------------------------------------------
# experiments

def _convergence_cell(args):
    problem, scheme, N, ref = args
    prob = get_problem(problem)
    T = prob.t_span[1] - prob.t_span[0]
    try:
        res = integrate_fixed(prob, scheme, N)
    except IntegrationError as exc:
        return ConvergenceRow(scheme, N, T / N, math.nan, None, math.nan, 0, f"unconverged: {exc}")
    return ConvergenceRow(scheme, N, T / N, error_max_norm(res.u_final, ref), None,
                          res.wall_time_seconds, res.total_matvecs)


def _map(fn, cells, jobs):
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, cells))
    return [fn(c) for c in cells]


def observed_orders(rows):
    """Fill ``order`` with ``log(err_prev / err) / log(N / N_prev)`` per scheme (log2 for doubling)."""
    prev = {}
    for r in rows:
        p = prev.get(r.scheme)
        if p is not None and p.error > 0 and r.error > 0:
            r.order = math.log(p.error / r.error) / math.log(r.N / p.N)
        prev[r.scheme] = r
    return rows


def run_convergence(spec: ExperimentSpec):
    name = canonical_name(spec.problem)
    Ns = spec.N or DEFAULT_N[name]
    ref = reference_solution(name, spec.cache_dir)
    cells = [(name, s, N, ref) for s in spec.schemes for N in Ns]
    return observed_orders(_map(_convergence_cell, cells, spec.jobs))


def _sweep_cell(args):
    problem, scheme, tol, ref = args
    prob = get_problem(problem)
    try:
        res = integrate_adaptive(prob, scheme, ControllerConfig(atol=tol, rtol=tol))
    except IntegrationError as exc:
        return SweepRow(scheme, tol, 0, 0, math.nan, math.nan, 0, math.nan, math.nan, f"failed: {exc}")
    est = res.error_estimates
    return SweepRow(scheme, tol, res.n_accepted, res.n_rejected, error_max_norm(res.u_final, ref),
                    res.wall_time_seconds, res.total_matvecs,
                    max(e["rms"] for e in est), max(e["max"] for e in est))


def run_adaptive_sweep(spec: ExperimentSpec):
    name = canonical_name(spec.problem)
    schemes = [s for s in spec.schemes if SchemeId(s).is_exponential and s != "exprb_euler"]
    if not schemes:
        raise ValueError("adaptive sweeps need a scheme with an embedded estimate")
    ref = reference_solution(name, spec.cache_dir)
    cells = [(name, s, t, ref) for s in schemes for t in (spec.tol or DEFAULT_SWEEP)]
    return _map(_sweep_cell, cells, spec.jobs)


def run_trace(spec: ExperimentSpec, target: float = 1e-3, tols=None):
    """Adaptive run whose achieved error is closest (in log) to ``target``.

    Tolerances from ``tols`` (default ``10**-2 ... 10**-7`` in quarter decades)
    are tried coarse to fine until the achieved error drops below
    ``target / 10``. Returns ``(tol, error, rows)`` with the accepted step sizes.
    """
    name = canonical_name(spec.problem)
    scheme = spec.schemes[0]
    prob = get_problem(name)
    ref = reference_solution(name, spec.cache_dir)
    tols = spec.tol or tols or tuple(10.0 ** -e for e in np.arange(2.0, 7.01, 0.25))
    best = None
    for tol in tols:
        try:
            res = integrate_adaptive(prob, scheme, ControllerConfig(atol=tol, rtol=tol))
        except IntegrationError:
            continue
        err = error_max_norm(res.u_final, ref)
        gap = abs(math.log10(err / target)) if err > 0 else math.inf
        if best is None or gap < best[0]:
            best = (gap, tol, err, res)
        if err < target / 10:
            break
    if best is None:
        raise IntegrationError("no tolerance in the trace search completed")
    _, tol, err, res = best
    t, rows = prob.t_span[0], []
    for i, h in enumerate(res.step_sizes):
        t += h
        rows.append(TraceRow(i + 1, t, h))
    return tol, err, rows


# ---------------------------------------------------------------------------
# self-tests

def phi_selftest(samples: int = 200, seed: int = 0, tol: float = 1e-12):
    rng = np.random.default_rng(seed)
    zs = rng.uniform(-50.0, 5.0, samples)
    rows = []
    for k in range(1, MAX_PHI_INDEX + 1):
        rel = max(abs(phi_scalar(k, z) - (q := phi_quadrature_oracle(k, z))) / abs(q) for z in zs)
        rows.append(CheckRow(f"phi_{k} scalar vs quadrature", rel <= tol, rel, f"{samples} samples in [-50, 5]"))
    Z = -np.diag(rng.uniform(0.0, 50.0, 6)) + 0.1 * np.triu(rng.standard_normal((6, 6)), 1)
    table = phi_dense(MAX_PHI_INDEX, Z)
    rec = table.recurrence_residual()
    rows.append(CheckRow("phi recurrence phi_k = 1/k! + Z phi_{k+1}", rec <= 1e-12, rec))
    return rows


def order_selftest():
    rows = []
    for scheme in ("exprb42", "exprb42n", "exprb32"):
        tab = tableau_of(scheme)
        if scheme != "exprb32":
            rep = check_classical_conditions(tab)
            worst = max(abs(c.residual) for c in rep.checks)
            rows.append(CheckRow(f"{tab.name} classical conditions", rep.passed, worst,
                                 f"beta0={rep.details['beta0']} beta1={rep.details['beta1']}"))
        rep = check_stiff_conditions(tab)
        worst = max(abs(c.residual) for c in rep.checks)
        if scheme == "exprb42n":
            # violating the stiff conditions is the expected outcome here
            mism = stiff_taylor_mismatch(tab, 2)
            rows.append(CheckRow(f"{tab.name} stiff conditions violated (expected)",
                                 not rep.checks[0].passed and mism != 0, worst,
                                 f"z^2 mismatch {mism}"))
        elif tab.order == 3:
            # only b2(Z) c2^2 = 2 phi3(Z) applies to a third-order scheme
            c = rep.checks[0]
            rows.append(CheckRow(f"{tab.name} stiff order-3 condition", c.passed, c.residual))
        else:
            rows.append(CheckRow(f"{tab.name} stiff conditions", rep.passed, worst))
    rows.extend(linear_exactness_selftest())
    rows.append(gauss_stability_selftest())
    return rows


def linear_exactness_selftest(n: int = 50, seed: int = 0, h: float = 0.1, tol: float = 1e-11):
    rng = np.random.default_rng(seed)
    M = random_stable_matrix(rng, n)
    u0 = rng.standard_normal(n)
    exact = expm(h * M) @ u0
    rows = []
    for s in SchemeId:
        if not s.is_exponential:
            continue
        prob = linear(M, u0, (0.0, h))
        u1 = make_stepper(s, prob).step(u0, h).u_next
        rel = np.linalg.norm(u1 - exact) / np.linalg.norm(exact)
        rows.append(CheckRow(f"{s.label} linear exactness", rel <= tol, rel))
    return rows


def gauss_stability_selftest():
    prob = linear([[-1.0]], [1.0], (0.0, 1.0))
    val = GaussStepper(prob).step(np.array([1.0]), 1.0).u_next[0]
    expected = float(Fraction(7, 19))
    return CheckRow("gauss42 stability function R(-1) = 7/19", abs(val - expected) <= 1e-13,
                    abs(val - expected))


def run_selftests():
    return phi_selftest() + order_selftest()


def check_rows_to_json(rows):
    return [dataclasses.asdict(r) for r in rows]

