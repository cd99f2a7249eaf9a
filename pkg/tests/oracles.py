"""Independent reference computations used by the tests."""
import numpy as np
from scipy import integrate


def beta_integral(lo, hi, t1, t2):
    """Adaptive quadrature of the unnormalized beta integrand over [lo, hi].

    From 0 the endpoint powers go into an algebraic quadrature weight, so
    shapes below one are integrated without evaluating a singularity.
    """
    if hi <= lo:
        return 0.0
    opts = dict(epsabs=1e-14, epsrel=1e-13, limit=500)
    if lo == 0.0 and hi == 1.0:
        val, _ = integrate.quad(lambda u: 1.0, 0.0, 1.0, weight="alg", wvar=(t1 - 1, t2 - 1), **opts)
    elif lo == 0.0:
        val, _ = integrate.quad(lambda u: (1 - u) ** (t2 - 1), 0.0, hi, weight="alg",
                                wvar=(t1 - 1, 0.0), **opts)
    else:
        val, _ = integrate.quad(lambda u: u ** (t1 - 1) * (1 - u) ** (t2 - 1), lo, hi, **opts)
    return val


def simpson_integral(f, lo, hi, points=20001):
    x = np.linspace(lo, hi, points)
    return integrate.simpson(f(x), x=x)


def tbeta_pdf(x, t1, t2, a, b):
    return x ** (t1 - 1) * (1 - x) ** (t2 - 1) / beta_integral(a, b, t1, t2)


def tbeta_cdf(x, t1, t2, a, b):
    return beta_integral(a, x, t1, t2) / beta_integral(a, b, t1, t2)
