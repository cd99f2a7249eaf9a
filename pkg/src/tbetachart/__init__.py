"""Percentile control charts for truncated-beta proportion data."""
from .chart import (ChartConfig, ControlLimits, SignalVerdict, build_limits, evaluate_subgroup,
                    limits_from_bootstrap, monitor_stream)
from .dist import TbetaParams, cdf, logpdf, pdf, quantile, sample
from .errors import ConfigError, ConvergenceError, DataError, DomainError, TbetaError
from .estimate import (FitResult, SubgroupData, fit_mle, ks_pvalue, ks_statistic, log_likelihood,
                       percentile_estimate)
from .runlength import (GridResult, RunLengthSummary, ShiftSpec, sdrl_consistency_check,
                        shift_grid, simulate_run_length)

__version__ = "0.1.0"
