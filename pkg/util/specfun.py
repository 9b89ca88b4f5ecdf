"""ln Gamma, digamma and trigamma on the positive reals.

Thin guards over scipy.special; arrays and scalars are both accepted and the
return type follows the input.
"""

import numpy as np
from scipy import special

from util.errors import DomainError


def _checked(x) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    bad = ~np.isfinite(arr) | (arr <= 0)
    if bad.any():
        raise DomainError(float(arr[bad].flat[0]))
    return arr


def _like_input(x, out: np.ndarray):
    return float(out) if np.ndim(x) == 0 else out


def ln_gamma(x):
    return _like_input(x, special.gammaln(_checked(x)))


def digamma(x):
    return _like_input(x, special.digamma(_checked(x)))


def trigamma(x):
    return _like_input(x, special.polygamma(1, _checked(x)))
