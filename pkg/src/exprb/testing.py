"""Slow reference evaluations used by the test-suite and the self-test command."""

import math
import warnings

import numpy as np
from scipy.integrate import IntegrationWarning, quad


def phi_quadrature_oracle(k: int, z):
    """phi_k(z) from its integral representation by adaptive Gauss-Kronrod quadrature.

    Independent of the Taylor/recurrence path in :func:`exprb.phi.phi_scalar`.
    Complex ``z`` is handled by integrating real and imaginary parts separately.
    """
    if k < 1:
        raise ValueError("the integral form needs k >= 1")
    fact = math.factorial(k - 1)
    opts = dict(epsabs=0.0, epsrel=2e-14, limit=400)

    def real_part(theta):
        return (np.exp((1.0 - theta) * z) * theta ** (k - 1)).real / fact

    def imag_part(theta):
        return (np.exp((1.0 - theta) * z) * theta ** (k - 1)).imag / fact

    with warnings.catch_warnings():
        # quadpack flags roundoff once it is at the double-precision floor
        warnings.simplefilter("ignore", IntegrationWarning)
        re, _ = quad(real_part, 0.0, 1.0, **opts)
        if np.isrealobj(z):
            return re
        im, _ = quad(imag_part, 0.0, 1.0, **opts)
    return complex(re, im)
