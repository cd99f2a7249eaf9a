"""Studentized bootstrap control chart for a truncated-beta percentile.

Phase I pools the reference subgroups, fits both shapes, and bootstraps the
percentile estimate from size-``n`` samples. The studentized bootstrap
values ``(xi* - xi_hat) / SE`` give the limit multipliers. Phase II refits
every incoming subgroup and checks its percentile against the limits.

Limits are ``center + t * SE``. ``center_mode`` selects the center: the
Phase-I estimate (the default) or the bootstrap mean. The empirical
``t`` quantiles default to type 6 (Weibull plotting positions).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .dist import quantile
from .errors import ConfigError, ConvergenceError, DataError, TbetaError
from .estimate import FitResult, SubgroupData, check_support, fit_mle, fit_percentiles

BOOT_MODES = ("parametric", "pooled-resample")
CENTER_MODES = ("phase1-estimate", "bootstrap-mean")
# numpy names: weibull = type 6, linear = type 7, median_unbiased = type 8
QUANTILE_METHODS = ("weibull", "linear", "median_unbiased", "hazen")
MAX_FAILURE_FRACTION = 0.10
MAX_RETRY_ROUNDS = 50


@dataclass(frozen=True)
class ChartConfig:
    p: float = 0.5
    far: float = 0.0027
    boot_reps: int = 5000
    boot_mode: str = "parametric"
    center_mode: str = "phase1-estimate"
    quantile_method: str = "weibull"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise ConfigError(f"percentile p must lie in (0, 1), got {self.p}")
        if not 0.0 < self.far < 0.5:
            raise ConfigError(f"false alarm rate must lie in (0, 0.5), got {self.far}")
        if int(self.boot_reps) != self.boot_reps or self.boot_reps < 100:
            raise ConfigError(f"boot_reps must be an integer >= 100, got {self.boot_reps}")
        if self.boot_mode not in BOOT_MODES:
            raise ConfigError(f"boot_mode must be one of {BOOT_MODES}, got {self.boot_mode!r}")
        if self.center_mode not in CENTER_MODES:
            raise ConfigError(f"center_mode must be one of {CENTER_MODES}, got {self.center_mode!r}")
        if self.quantile_method not in QUANTILE_METHODS:
            raise ConfigError(f"quantile_method must be one of {QUANTILE_METHODS}, "
                              f"got {self.quantile_method!r}")


@dataclass(frozen=True)
class ControlLimits:
    lcl: float
    cl: float
    ucl: float
    boot_mean: float
    boot_se: float
    t_lower: float
    t_upper: float
    phase1_estimate: float
    failures: int = 0
    # descriptive metadata carried into the limits JSON
    p: float | None = None
    far: float | None = None
    a: float | None = None
    b: float | None = None

    def outside_support(self, a: float | None = None, b: float | None = None) -> bool:
        """True when a limit falls outside ``[a, b]`` (limits are never clamped)."""
        a = self.a if a is None else a
        b = self.b if b is None else b
        if a is None or b is None:
            return False
        return self.lcl < a or self.ucl > b

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ControlLimits":
        names = {f.name for f in fields(cls)}
        missing = {"lcl", "ucl"} - d.keys()
        if missing:
            raise ConfigError(f"limits are missing field(s): {sorted(missing)}")
        kw = {k: v for k, v in d.items() if k in names}
        for k in ("cl", "boot_mean", "boot_se", "t_lower", "t_upper", "phase1_estimate"):
            kw.setdefault(k, math.nan)
        return cls(**kw)

    @classmethod
    def fixed(cls, lcl: float, ucl: float, cl: float | None = None, **meta) -> "ControlLimits":
        """Limits given directly, with no bootstrap behind them."""
        if not lcl < ucl:
            raise ConfigError(f"need lcl < ucl, got {lcl} and {ucl}")
        cl = 0.5 * (lcl + ucl) if cl is None else cl
        return cls(lcl=lcl, cl=cl, ucl=ucl, boot_mean=math.nan, boot_se=math.nan,
                   t_lower=math.nan, t_upper=math.nan, phase1_estimate=math.nan, **meta)


@dataclass(frozen=True)
class SignalVerdict:
    statistic: float
    in_control: bool | None
    breach: str
    subgroup_index: int

    @property
    def indeterminate(self) -> bool:
        return self.in_control is None


@dataclass
class BootstrapRun:
    """Phase-I fit and the bootstrap percentile estimates behind a set of limits."""

    fit: FitResult
    percentiles: np.ndarray
    phase1_estimates: np.ndarray
    estimates: np.ndarray = field(repr=False)
    failures: int = 0


def bootstrap_percentiles(phase1: SubgroupData, a: float, b: float, percentiles, boot_reps: int,
                          boot_mode: str, rng) -> BootstrapRun:
    """Pooled fit plus ``boot_reps`` bootstrap percentile estimates.

    Each bootstrap sample has the subgroup size ``n``. ``parametric`` draws
    it from the pooled fit; ``pooled-resample`` resamples the ``m`` pooled
    observations with replacement. Samples whose fit fails are redrawn, and
    the number of failures is kept.
    """
    if boot_mode not in BOOT_MODES:
        raise ConfigError(f"boot_mode must be one of {BOOT_MODES}, got {boot_mode!r}")
    if phase1.m < 10:
        raise DataError(f"phase I needs at least 10 observations, got {phase1.m}")
    ps = np.atleast_1d(np.asarray(percentiles, dtype=float))
    rng = np.random.default_rng(rng)
    fit = fit_mle(phase1, a, b)
    if not fit.converged:
        raise ConvergenceError("maximum likelihood fit of the pooled phase I data did not converge")
    xi_hat = np.atleast_1d(quantile(ps, fit.params))
    n = phase1.n
    pooled = phase1.flat
    warm = (fit.params.theta1, fit.params.theta2)

    estimates = np.empty((boot_reps, ps.size))
    pending = np.arange(boot_reps)
    failures = 0
    for _ in range(MAX_RETRY_ROUNDS):
        if boot_mode == "parametric":
            u = rng.random((pending.size, n))
            u[u == 0.0] = np.finfo(float).tiny
            draws = quantile(u, fit.params)
        else:
            draws = pooled[rng.integers(0, pooled.size, size=(pending.size, n))]
        xi, ok = fit_percentiles(draws, a, b, ps, init=warm)
        estimates[pending[ok]] = xi[ok]
        failures += int((~ok).sum())
        if failures > MAX_FAILURE_FRACTION * boot_reps:
            raise ConvergenceError(f"{failures} of {boot_reps} bootstrap fits failed (limit 10%)")
        pending = pending[~ok]
        if pending.size == 0:
            break
    else:
        raise ConvergenceError(f"{pending.size} bootstrap replicates still failing after retries")
    return BootstrapRun(fit=fit, percentiles=ps, phase1_estimates=xi_hat, estimates=estimates,
                        failures=failures)


def limits_from_bootstrap(estimates, phase1_estimate: float, far: float,
                          center_mode: str = "phase1-estimate", quantile_method: str = "weibull",
                          failures: int = 0, **meta) -> ControlLimits:
    """Turn bootstrap percentile estimates into control limits.

    The standard error uses divisor ``B``. The studentized values
    ``(xi* - xi_hat) / SE`` are cut at their empirical ``far/2`` and
    ``1 - far/2`` quantiles. The limits are ``center + t * SE``, where the
    center is the Phase-I estimate (``phase1-estimate``) or the bootstrap
    mean (``bootstrap-mean``). The center line is that same center.
    """
    if center_mode not in CENTER_MODES:
        raise ConfigError(f"center_mode must be one of {CENTER_MODES}, got {center_mode!r}")
    est = np.asarray(estimates, dtype=float)
    mean = float(np.mean(est))
    se = float(np.std(est))
    # rounding leaves a tiny nonzero spread on constant input
    if not se > 1e-12 * max(abs(mean), 1.0):
        raise ConvergenceError("bootstrap estimates have zero spread; limits are undefined")
    t = (est - phase1_estimate) / se
    t_lo, t_hi = (float(v) for v in np.quantile(t, [far / 2.0, 1.0 - far / 2.0],
                                                 method=quantile_method))
    center = mean if center_mode == "bootstrap-mean" else float(phase1_estimate)
    return ControlLimits(lcl=center + t_lo * se, cl=center, ucl=center + t_hi * se, boot_mean=mean,
                         boot_se=se, t_lower=t_lo, t_upper=t_hi,
                         phase1_estimate=float(phase1_estimate), failures=failures, far=far, **meta)


def build_limits(phase1: SubgroupData, a: float, b: float, config: ChartConfig) -> ControlLimits:
    """Phase-I limits for the ``config.p`` percentile; deterministic in ``config.seed``."""
    phase1.check_support(a, b)
    run = bootstrap_percentiles(phase1, a, b, config.p, config.boot_reps, config.boot_mode,
                                np.random.default_rng(config.seed))
    return limits_from_bootstrap(run.estimates[:, 0], float(run.phase1_estimates[0]), config.far,
                                 config.center_mode, config.quantile_method,
                                 failures=run.failures, p=config.p, a=a, b=b)


def classify(statistic: float, limits: ControlLimits, index: int) -> SignalVerdict:
    if not math.isfinite(statistic):
        return SignalVerdict(math.nan, None, "indeterminate", index)
    if statistic < limits.lcl:
        return SignalVerdict(statistic, False, "below-lcl", index)
    if statistic > limits.ucl:
        return SignalVerdict(statistic, False, "above-ucl", index)
    return SignalVerdict(statistic, True, "none", index)


def evaluate_subgroup(test, limits: ControlLimits, a: float, b: float, p: float,
                      index: int = 1) -> SignalVerdict:
    """Refit one Phase-II subgroup and test its percentile (bounds inclusive)."""
    x = np.asarray(test, dtype=float).ravel()
    if x.size < 2:
        raise DataError(f"a test subgroup needs at least 2 observations, got {x.size}")
    check_support(x, a, b)
    try:
        fit = fit_mle(x, a, b)
        stat = quantile(p, fit.params) if fit.converged else math.nan
    except TbetaError:
        stat = math.nan
    return classify(stat, limits, index)


def monitor_stream(subgroups, limits: ControlLimits, a: float, b: float, p: float,
                   start_index: int = 1) -> list[SignalVerdict]:
    """Evaluate subgroups in order; never stops early."""
    rows = [np.asarray(s, dtype=float).ravel() for s in subgroups]
    if not rows:
        return []
    if len({r.size for r in rows}) != 1:
        raise DataError("all monitored subgroups must have the same size")
    x = np.vstack(rows)
    if x.shape[1] < 2:
        raise DataError("monitored subgroups need at least 2 observations")
    check_support(x, a, b)
    xi, _ = fit_percentiles(x, a, b, [p])
    return [classify(float(v), limits, start_index + j) for j, v in enumerate(xi[:, 0])]
