"""Maximum-likelihood fitting, percentile estimates and K-S goodness of fit."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .dist import TbetaParams, cdf, logpdf, quantile
from .errors import ConvergenceError, DataError, DomainError

log = logging.getLogger(__name__)

MIN_VARIANCE = 1e-12
INIT_CLAMP = (0.1, 100.0)


@dataclass(frozen=True)
class SubgroupData:
    """Observations arranged as ``k`` subgroups of ``n``."""

    observations: np.ndarray

    def __post_init__(self):
        obs = np.array(self.observations, dtype=float)
        if obs.ndim != 2:
            raise DataError(f"subgroups must form a k x n array, got shape {obs.shape}")
        if obs.shape[0] < 1 or obs.shape[1] < 2:
            raise DataError(f"need k >= 1 subgroups of size n >= 2, got shape {obs.shape}")
        if not np.all(np.isfinite(obs)):
            raise DataError("observations must be finite")
        obs.setflags(write=False)
        object.__setattr__(self, "observations", obs)

    @classmethod
    def from_flat(cls, values, n: int) -> "SubgroupData":
        """Partition ``values`` into consecutive subgroups of size ``n``."""
        values = np.asarray(values, dtype=float).ravel()
        if n < 2:
            raise DataError(f"subgroup size must be at least 2, got {n}")
        if values.size == 0 or values.size % n:
            raise DataError(f"{values.size} observations cannot be split into subgroups of {n}")
        return cls(values.reshape(-1, n))

    @property
    def k(self) -> int:
        return self.observations.shape[0]

    @property
    def n(self) -> int:
        return self.observations.shape[1]

    @property
    def m(self) -> int:
        return self.observations.size

    @property
    def flat(self) -> np.ndarray:
        return self.observations.ravel()

    def check_support(self, a: float, b: float):
        check_support(self.flat, a, b)


@dataclass(frozen=True)
class FitResult:
    params: TbetaParams
    loglik: float
    converged: bool
    iterations: int


def check_support(x, a: float, b: float):
    x = np.asarray(x, dtype=float)
    bad = x[(x < a) | (x > b) | np.isnan(x)]
    if bad.size:
        shown = ", ".join(f"{v:g}" for v in bad[:10])
        more = f" (+{bad.size - 10} more)" if bad.size > 10 else ""
        raise DataError(f"{bad.size} observation(s) outside support [{a:g}, {b:g}]: {shown}{more}")


def _flatten(data) -> np.ndarray:
    if isinstance(data, SubgroupData):
        return data.flat
    return np.asarray(data, dtype=float).ravel()


def log_likelihood(data, params: TbetaParams) -> float:
    """Sum of log densities over all observations, whatever their grouping."""
    x = _flatten(data)
    check_support(x, params.a, params.b)
    return float(np.sum(logpdf(x, params)))


def moment_start(x, a: float, b: float) -> tuple[float, float]:
    """Beta method-of-moments shapes for ``x`` rescaled to ``[0, 1]``, clamped."""
    z = (np.asarray(x, dtype=float) - a) / (b - a)
    mean = z.mean()
    var = z.var()
    common = mean * (1.0 - mean) / var - 1.0 if var > 0 else INIT_CLAMP[1]
    lo, hi = INIT_CLAMP
    t1 = float(np.clip(mean * common, lo, hi)) if np.isfinite(common) else hi
    t2 = float(np.clip((1.0 - mean) * common, lo, hi)) if np.isfinite(common) else hi
    return t1, t2


def _moment_start_rows(x: np.ndarray, a: float, b: float):
    z = (x - a) / (b - a)
    mean = z.mean(axis=1)
    var = z.var(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        common = mean * (1.0 - mean) / var - 1.0
    common = np.where(np.isfinite(common), common, INIT_CLAMP[1])
    lo, hi = INIT_CLAMP
    return np.clip(mean * common, lo, hi), np.clip((1.0 - mean) * common, lo, hi)


def _sufficient(x: np.ndarray):
    with np.errstate(divide="ignore"):
        return np.log(x).sum(axis=-1), np.log1p(-x).sum(axis=-1)


def fit_mle(data, a: float, b: float, init: tuple[float, float] | None = None) -> FitResult:
    """Maximize the truncated-beta log-likelihood over both shapes.

    The search is a Nelder-Mead simplex in ``(log theta1, log theta2)``,
    stopped once the simplex is smaller than 1e-8. ``a`` and ``b`` are fixed.
    A run that hits the iteration cap comes back with ``converged=False``
    and the best point found.
    """
    x = _flatten(data)
    TbetaParams(1.0, 1.0, a, b)
    check_support(x, a, b)
    if x.size < 2 or x.var() < MIN_VARIANCE:
        raise DataError("observations are degenerate (sample variance below 1e-12)")
    if init is None:
        init = moment_start(x, a, b)
    elif not (init[0] > 0 and init[1] > 0):
        raise DomainError(f"initial shapes must be positive, got {init}")
    s1, s2 = _sufficient(x)
    l1, l2, f, conv, nev = _kernels.nelder_mead(
        s1, s2, float(x.size), a, b, np.log(init[0]), np.log(init[1]),
        _kernels.NM_STEP, _kernels.NM_TOL, _kernels.NM_MAXITER,
    )
    conv = bool(conv) and np.isfinite(f) and not (_kernels._pinned(l1) or _kernels._pinned(l2))
    params = TbetaParams(float(np.exp(l1)), float(np.exp(l2)), a, b)
    return FitResult(params=params, loglik=float(-f), converged=conv, iterations=int(nev))


def percentile_estimate(fit: FitResult, p: float) -> float:
    if not fit.converged:
        raise ConvergenceError("percentile requested from a fit that did not converge")
    return quantile(p, fit.params)


def fit_percentiles(samples, a: float, b: float, ps, init=None):
    """Fit each row of ``samples`` and return its estimated percentiles.

    Returns ``(xi, ok)`` with ``xi`` of shape ``(rows, len(ps))``; rows whose
    fit failed, or whose data are degenerate, have ``ok = False`` and NaN
    estimates. ``init`` is one shared ``(theta1, theta2)`` warm start;
    without it each row starts from its own moment estimates.
    """
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    ps = np.atleast_1d(np.asarray(ps, dtype=float))
    rows = x.shape[0]
    if init is None:
        i1, i2 = _moment_start_rows(x, a, b)
    else:
        i1 = np.full(rows, float(init[0]))
        i2 = np.full(rows, float(init[1]))
    s1, s2 = _sufficient(x)
    _, _, _, ok, _, xi = _kernels.fit_batch(
        np.ascontiguousarray(s1), np.ascontiguousarray(s2), float(x.shape[1]), a, b,
        np.ascontiguousarray(i1, dtype=float), np.ascontiguousarray(i2, dtype=float), ps,
    )
    ok &= x.var(axis=1) >= MIN_VARIANCE
    xi[~ok] = np.nan
    return xi, ok


def _fit_rows(x: np.ndarray, a: float, b: float):
    i1, i2 = _moment_start_rows(x, a, b)
    s1, s2 = _sufficient(x)
    t1, t2, _, ok, _, _ = _kernels.fit_batch(
        np.ascontiguousarray(s1), np.ascontiguousarray(s2), float(x.shape[1]), a, b,
        np.ascontiguousarray(i1), np.ascontiguousarray(i2), np.empty(0),
    )
    ok &= x.var(axis=1) >= MIN_VARIANCE
    return t1, t2, ok


def ks_statistic(data, params: TbetaParams) -> float:
    """Two-sided Kolmogorov-Smirnov distance to the model cdf."""
    x = np.sort(_flatten(data))
    if x.size == 0:
        raise DataError("K-S statistic needs at least one observation")
    check_support(x, params.a, params.b)
    f = np.asarray(cdf(x, params))
    n = x.size
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - f), np.max(f - (i - 1) / n)))


def ks_pvalue(stat: float, sample_size: int, params: TbetaParams, reps: int = 2000, seed=0,
              refit: bool = True) -> float:
    """Parametric-bootstrap p-value of a K-S statistic.

    Each replicate draws ``sample_size`` points from ``params``, refits both
    shapes and records its own K-S distance; the p-value is the fraction of
    replicates at or above ``stat``. Replicates whose fit fails are dropped.
    With ``refit=False`` every replicate is measured against ``params``
    itself, which reproduces the classical known-parameter test.
    """
    if reps < 1000:
        raise DomainError(f"reps must be at least 1000, got {reps}")
    if sample_size < 2:
        raise DomainError(f"sample_size must be at least 2, got {sample_size}")
    if stat <= 0:
        return 1.0
    rng = np.random.default_rng(seed)
    u = rng.random((reps, sample_size))
    u[u == 0.0] = np.finfo(float).tiny
    x = quantile(u, params)
    if refit:
        t1, t2, ok = _fit_rows(x, params.a, params.b)
    else:
        t1 = np.full(reps, params.theta1)
        t2 = np.full(reps, params.theta2)
        ok = np.ones(reps, dtype=bool)
    failures = int((~ok).sum())
    if failures:
        log.warning("ks_pvalue: dropped %d of %d replicates with failed fits", failures, reps)
    xs = np.sort(x[ok], axis=1)
    d = _kernels.ks_many(np.ascontiguousarray(xs), t1[ok], t2[ok], params.a, params.b)
    return float(np.mean(d >= stat))
