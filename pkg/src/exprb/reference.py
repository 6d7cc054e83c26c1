"""On-disk cache of high-resolution reference solutions.

Each reference is one ``.npz`` file named ``{problem}__{scheme}__N{N}.npz``
holding the final state ``u`` plus the metadata fields ``format_version``,
``problem``, ``scheme``, ``N`` and ``t_final``. Files with another
``format_version`` are ignored. The cache directory is taken from the
``cache_dir`` argument, else ``$EXPRB_CACHE_DIR``, else ``~/.cache/exprb``.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .problems import ALIASES, PROBLEMS, get_problem
from .stepcontrol import integrate_fixed

CACHE_ENV = "EXPRB_CACHE_DIR"
FORMAT_VERSION = 1

#: fixed-step runs used as references where no closed form exists
RECIPES = {
    "van_der_pol": ("exprb42", 2 ** 17),
    "adr_2d": ("exprb42", 4096),
}


class MissingReferenceError(LookupError):
    pass


def canonical_name(problem) -> str:
    name = problem if isinstance(problem, str) else problem.name
    key = ALIASES.get(name.lower(), name.lower())
    if key not in PROBLEMS:
        raise KeyError(f"unknown problem {name!r}")
    return key


def cache_dir(path=None) -> Path:
    if path is not None:
        return Path(path)
    env = os.environ.get(CACHE_ENV)
    return Path(env) if env else Path.home() / ".cache" / "exprb"


def cache_path(problem, scheme, N, directory=None) -> Path:
    return cache_dir(directory) / f"{canonical_name(problem)}__{scheme}__N{int(N)}.npz"


def _recipe(name, scheme=None, N=None):
    default_scheme, default_N = RECIPES.get(name, ("exprb42", None))
    scheme, N = scheme or default_scheme, N or default_N
    if N is None:
        raise ValueError(f"no default reference resolution for {name!r}; pass N")
    return scheme, int(N)


def load_reference(problem, scheme=None, N=None, directory=None) -> np.ndarray:
    name = canonical_name(problem)
    scheme, N = _recipe(name, scheme, N)
    path = cache_path(name, scheme, N, directory)
    hint = (f"no cached reference for {name} ({scheme}, N={N}) in {path.parent}; "
            f"build it with `exprb-bench build-reference --problem {name}`"
            f" or point ${CACHE_ENV} at an existing cache")
    if not path.exists():
        raise MissingReferenceError(hint)
    with np.load(path) as data:
        if int(data["format_version"]) != FORMAT_VERSION:
            raise MissingReferenceError(hint + f" (stale format {int(data['format_version'])})")
        return data["u"].copy()


def build_reference(problem, scheme=None, N=None, directory=None, overwrite=False) -> Path:
    """Integrate with the reference recipe and store the final state."""
    name = canonical_name(problem)
    scheme, N = _recipe(name, scheme, N)
    path = cache_path(name, scheme, N, directory)
    if path.exists() and not overwrite:
        return path
    prob = get_problem(name)
    res = integrate_fixed(prob, scheme, N)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.stem + f".tmp{os.getpid()}.npz")
    np.savez(tmp, u=res.u_final, format_version=FORMAT_VERSION, problem=name,
             scheme=scheme, N=N, t_final=res.t_final)
    # atomic so concurrent readers never see a partial file
    os.replace(tmp, path)
    return path


def reference_solution(problem, directory=None) -> np.ndarray:
    """Exact final state when known, otherwise the cached reference."""
    prob = get_problem(problem) if isinstance(problem, str) else problem
    if prob.exact is not None:
        return prob.exact(prob.t_span[1])
    return load_reference(prob.name, directory=directory)
