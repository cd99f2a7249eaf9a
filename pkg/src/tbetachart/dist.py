"""Truncated beta distribution on ``[a, b]``.

The density is ``x**(t1-1) * (1-x)**(t2-1) / (I(b) - I(a))`` where ``I`` is
the unnormalized incomplete beta integral. Functions accept scalars or
arrays and return the same shape.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from . import _kernels
from .errors import ConvergenceError, DomainError

MIN_SUPPORT_WIDTH = 1e-6


@dataclass(frozen=True)
class TbetaParams:
    theta1: float
    theta2: float
    a: float = 0.0
    b: float = 1.0

    def __post_init__(self):
        for name in ("theta1", "theta2", "a", "b"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise DomainError(f"{name} must be finite, got {v!r}")
            object.__setattr__(self, name, float(v))
        if self.theta1 <= 0 or self.theta2 <= 0:
            raise DomainError(f"shape parameters must be positive, got ({self.theta1}, {self.theta2})")
        if not 0.0 <= self.a < self.b <= 1.0:
            raise DomainError(f"support must satisfy 0 <= a < b <= 1, got [{self.a}, {self.b}]")
        if self.b - self.a < MIN_SUPPORT_WIDTH:
            raise DomainError(f"support [{self.a}, {self.b}] is narrower than {MIN_SUPPORT_WIDTH}")

    @property
    def support(self) -> tuple[float, float]:
        return self.a, self.b

    def log_normalizer(self) -> float:
        """``log(I(b) - I(a))``; raises if the support carries no mass."""
        lm = _kernels.log_mass(self.theta1, self.theta2, self.a, self.b)
        if not math.isfinite(lm):
            raise DomainError(f"support mass of {self} underflows to zero")
        return lm


def _check_shapes(theta1, theta2):
    if not (theta1 > 0 and theta2 > 0):
        raise DomainError(f"shape parameters must be positive, got ({theta1}, {theta2})")


def incomplete_beta_unnorm(c, theta1: float, theta2: float):
    """Integral of ``u**(theta1-1) * (1-u)**(theta2-1)`` over ``[0, c]``."""
    _check_shapes(theta1, theta2)
    c_arr = np.asarray(c, dtype=float)
    if np.any((c_arr < 0) | (c_arr > 1)) or np.any(np.isnan(c_arr)):
        raise DomainError(f"upper limit must lie in [0, 1], got {c!r}")
    lb = _kernels.lbeta(theta1, theta2)
    flat = np.array([_kernels.betainc_pair(v, theta1, theta2, lb)[0] for v in c_arr.ravel()])
    out = math.exp(lb) * flat.reshape(c_arr.shape)
    return out.item() if out.ndim == 0 else out


def logpdf(x, params: TbetaParams):
    """Log density; ``-inf`` outside ``[a, b]``.

    At a support endpoint equal to 0 or 1 with a shape below one the value
    is ``+inf`` rather than an error.
    """
    x_arr = np.asarray(x, dtype=float)
    lm = params.log_normalizer()
    inside = (x_arr >= params.a) & (x_arr <= params.b)
    xc = np.where(inside, x_arr, 0.5)
    with np.errstate(divide="ignore", invalid="ignore"):
        val = special.xlogy(params.theta1 - 1.0, xc) + special.xlog1py(params.theta2 - 1.0, -xc) - lm
    out = np.where(inside, val, -np.inf)
    return out.item() if out.ndim == 0 else out


def pdf(x, params: TbetaParams):
    out = np.exp(logpdf(x, params))
    return float(out) if np.ndim(out) == 0 else out


def cdf(x, params: TbetaParams):
    x_arr = np.asarray(x, dtype=float)
    params.log_normalizer()
    out = _kernels.cdf_many(np.ascontiguousarray(x_arr.ravel()), params.theta1, params.theta2,
                            params.a, params.b).reshape(x_arr.shape)
    return out.item() if out.ndim == 0 else out


def quantile(p, params: TbetaParams):
    """Inverse cdf by bracketed Brent iteration on ``[a, b]``."""
    p_arr = np.asarray(p, dtype=float)
    if np.any(~((p_arr > 0) & (p_arr < 1))):
        raise DomainError(f"probability must lie in (0, 1), got {p!r}")
    params.log_normalizer()
    out = _kernels.quantile_many(np.ascontiguousarray(p_arr.ravel()), params.theta1, params.theta2,
                                 params.a, params.b).reshape(p_arr.shape)
    if np.any(np.isnan(out)):
        raise ConvergenceError(f"quantile root finding failed for {params}")
    return out.item() if out.ndim == 0 else out


def sample(params: TbetaParams, count: int, seed) -> np.ndarray:
    """Inverse-transform draws; ``seed`` is an int or a numpy Generator."""
    if count < 1:
        raise DomainError(f"count must be positive, got {count}")
    rng = np.random.default_rng(seed)
    u = rng.random(count)
    # u == 0 has probability 2**-53; map it onto the lower endpoint
    u[u == 0.0] = np.finfo(float).tiny
    return quantile(u, params)
