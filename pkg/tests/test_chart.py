import math
from dataclasses import replace

import numpy as np
import pytest

from tbetachart import datasets
from tbetachart.chart import (ChartConfig, ControlLimits, bootstrap_percentiles, build_limits,
                              classify, evaluate_subgroup, limits_from_bootstrap, monitor_stream)
from tbetachart.dist import TbetaParams, quantile, sample
from tbetachart.errors import ConfigError, ConvergenceError, DataError
from tbetachart.estimate import SubgroupData
from tbetachart.runlength import sampling_quantile_limits

IC = TbetaParams(2, 15, 0, 0.5)
RH07 = SubgroupData.from_flat(datasets.load("rh-may-2007"), 10)
RH08 = SubgroupData.from_flat(datasets.load("rh-may-2008"), 10)


def phase1(seed, k=20, n=10):
    return SubgroupData(sample(IC, k * n, np.random.default_rng([99, seed])).reshape(k, n))


class TestConfig:
    def test_defaults(self):
        c = ChartConfig()
        assert (c.p, c.far, c.boot_reps) == (0.5, 0.0027, 5000)

    @pytest.mark.parametrize("kw", [dict(p=0.0), dict(p=1.0), dict(far=0.0), dict(far=0.5),
                                    dict(boot_reps=99), dict(boot_reps=150.5),
                                    dict(boot_mode="x"), dict(center_mode="x"),
                                    dict(quantile_method="x")])
    def test_rejects(self, kw):
        with pytest.raises(ConfigError):
            ChartConfig(**kw)

    def test_boot_floor(self):
        assert ChartConfig(boot_reps=100).boot_reps == 100


class TestLimitsFromBootstrap:
    def test_formula(self):
        rng = np.random.default_rng(0)
        est = rng.normal(0.3, 0.02, 4000)
        lim = limits_from_bootstrap(est, 0.31, 0.01, quantile_method="linear")
        se = est.std()
        t = (est - 0.31) / se
        lo, hi = np.quantile(t, [0.005, 0.995])
        assert lim.lcl == pytest.approx(0.31 + lo * se, abs=1e-15)
        assert lim.ucl == pytest.approx(0.31 + hi * se, abs=1e-15)
        assert lim.cl == 0.31 and lim.boot_se == se

    def test_bootstrap_mean_center(self):
        est = np.random.default_rng(1).normal(0.3, 0.02, 1000)
        lim = limits_from_bootstrap(est, 0.31, 0.01, center_mode="bootstrap-mean")
        assert lim.cl == pytest.approx(est.mean())
        assert lim.lcl == pytest.approx(est.mean() + lim.t_lower * lim.boot_se)

    def test_weibull_positions(self):
        # type 6 places the 1/(B+1) and B/(B+1) quantiles on the extreme order statistics
        est = np.arange(1.0, 100.0)
        lim = limits_from_bootstrap(est, 50.0, 0.02)
        assert lim.lcl == pytest.approx(1.0) and lim.ucl == pytest.approx(99.0)

    def test_ordering(self):
        est = np.random.default_rng(2).gamma(4, size=2000)
        lim = limits_from_bootstrap(est, 4.0, 0.49)
        t_med = np.median((est - 4.0) / est.std())
        assert lim.t_lower <= t_med <= lim.t_upper

    def test_zero_spread(self):
        with pytest.raises(ConvergenceError):
            limits_from_bootstrap(np.full(200, 0.3), 0.3, 0.01)


class TestBuildLimits:
    def test_rh2007_near_published(self):
        lim = build_limits(RH07, 0.3, 1.0, ChartConfig(p=0.9, far=0.0027, seed=0))
        assert lim.cl == pytest.approx(0.926, abs=0.02)
        assert lim.lcl == pytest.approx(0.805, abs=0.02)
        assert lim.ucl == pytest.approx(0.976, abs=0.02)
        assert lim.failures == 0

    def test_table1_cell(self):
        # Phase-I data vary with the seed; the across-seed mean is compared
        out = []
        for s in range(6):
            lim = build_limits(phase1(s), 0, 0.5, ChartConfig(p=0.5, far=0.005, seed=s))
            out.append((lim.lcl, lim.ucl))
        lcl, ucl = np.mean(out, axis=0)
        assert lcl == pytest.approx(0.0547, abs=0.015)
        assert ucl == pytest.approx(0.1936, abs=0.015)

    def test_deterministic(self):
        c = ChartConfig(p=0.9, boot_reps=500, seed=3)
        assert build_limits(RH07, 0.3, 1.0, c) == build_limits(RH07, 0.3, 1.0, c)

    def test_seed_matters(self):
        c = ChartConfig(p=0.9, boot_reps=500, seed=3)
        assert build_limits(RH07, 0.3, 1.0, c) != build_limits(RH07, 0.3, 1.0, replace(c, seed=4))

    def test_far_ordering(self):
        c = ChartConfig(p=0.9, far=0.005, boot_reps=2000, seed=1)
        wide = build_limits(RH07, 0.3, 1.0, replace(c, far=0.002))
        narrow = build_limits(RH07, 0.3, 1.0, c)
        assert wide.lcl <= narrow.lcl and wide.ucl >= narrow.ucl

    def test_pooled_resample(self):
        lim = build_limits(RH07, 0.3, 1.0, ChartConfig(p=0.9, boot_mode="pooled-resample",
                                                       boot_reps=1000))
        assert 0.7 < lim.lcl < lim.cl < lim.ucl < 1.0

    def test_support_checked(self):
        with pytest.raises(DataError):
            build_limits(RH07, 0.5, 1.0, ChartConfig(p=0.9, boot_reps=100))

    def test_too_few(self):
        with pytest.raises(DataError):
            build_limits(SubgroupData(RH07.observations[:1, :5]), 0.3, 1.0, ChartConfig(boot_reps=100))

    def test_converges_to_sampling_quantiles(self):
        # large-B parametric limits against the direct simulation oracle
        truth = sampling_quantile_limits(IC, 10, 0.5, 0.01, draws=100_000, seed=5)
        out = []
        for s in range(4):
            lim = build_limits(phase1(s), 0, 0.5, ChartConfig(p=0.5, far=0.01, seed=s))
            out.append((lim.lcl, lim.ucl))
        lcl, ucl = np.mean(out, axis=0)
        assert lcl == pytest.approx(truth.lcl, abs=0.01)
        assert ucl == pytest.approx(truth.ucl, abs=0.01)

    def test_bootstrap_run_shapes(self):
        run = bootstrap_percentiles(RH07, 0.3, 1.0, [0.5, 0.9], 300, "parametric", 0)
        assert run.estimates.shape == (300, 2)
        assert run.phase1_estimates[1] == pytest.approx(0.92629, abs=1e-4)


class TestLimitsRecord:
    def test_round_trip(self):
        lim = limits_from_bootstrap(np.linspace(0.1, 0.2, 500), 0.15, 0.01, p=0.5, a=0.0, b=0.5)
        assert ControlLimits.from_dict(lim.to_dict()) == lim

    def test_fixed(self):
        lim = ControlLimits.fixed(0.1, 0.3)
        assert lim.cl == pytest.approx(0.2) and math.isnan(lim.boot_se)
        with pytest.raises(ConfigError):
            ControlLimits.fixed(0.3, 0.1)

    def test_missing_fields(self):
        with pytest.raises(ConfigError):
            ControlLimits.from_dict({"lcl": 0.1})

    def test_outside_support(self):
        assert ControlLimits.fixed(-0.01, 0.3, a=0.0, b=0.5).outside_support()
        assert not ControlLimits.fixed(0.01, 0.3, a=0.0, b=0.5).outside_support()


class TestClassify:
    lim = ControlLimits.fixed(0.1, 0.3)

    def test_inclusive(self):
        assert classify(0.3, self.lim, 1).in_control
        assert classify(0.1, self.lim, 1).in_control

    def test_breaches(self):
        assert classify(0.31, self.lim, 2).breach == "above-ucl"
        assert classify(0.05, self.lim, 2).breach == "below-lcl"

    def test_nan(self):
        v = classify(math.nan, self.lim, 3)
        assert v.indeterminate and v.breach == "indeterminate"


class TestMonitoring:
    def test_rh2008_against_2007(self):
        lim = build_limits(RH07, 0.3, 1.0, ChartConfig(p=0.9, seed=0))
        verdicts = monitor_stream(RH08.observations, lim, 0.3, 1.0, 0.9)
        assert sum(v.in_control is False for v in verdicts) >= 2

    def test_empty(self):
        assert monitor_stream([], ControlLimits.fixed(0.1, 0.3), 0, 0.5, 0.5) == []

    def test_single(self):
        v = monitor_stream([sample(IC, 10, 1)], ControlLimits.fixed(0.05, 0.2), 0, 0.5, 0.5)
        assert len(v) == 1 and v[0].subgroup_index == 1

    def test_degenerate_subgroup_indeterminate(self):
        v = monitor_stream([np.full(10, 0.2), sample(IC, 10, 1)], ControlLimits.fixed(0.05, 0.2),
                           0, 0.5, 0.5)
        assert v[0].indeterminate and not v[1].indeterminate

    def test_stream_agrees_with_single(self):
        lim = ControlLimits.fixed(0.08, 0.14)
        groups = sample(IC, 50, 2).reshape(5, 10)
        stream = monitor_stream(groups, lim, 0, 0.5, 0.5, start_index=7)
        for j, g in enumerate(groups):
            one = evaluate_subgroup(g, lim, 0, 0.5, 0.5, index=7 + j)
            assert one.breach == stream[j].breach
            assert one.statistic == pytest.approx(stream[j].statistic, abs=1e-6)

    def test_false_alarm_rate(self):
        # limits at the true sampling quantiles: signals are Binomial(N, far)
        far = 0.0027
        lim = sampling_quantile_limits(IC, 10, 0.5, far, draws=200_000, seed=6)
        groups = sample(IC, 10 * 20_000, 7).reshape(-1, 10)
        signals = sum(v.in_control is False for v in monitor_stream(groups, lim, 0, 0.5, 0.5))
        mean = far * 20_000
        assert abs(signals - mean) < 4 * math.sqrt(mean)

    def test_shifted_stream_signals(self):
        lim = build_limits(phase1(0), 0, 0.5, ChartConfig(p=0.5, boot_reps=1000))
        shifted = TbetaParams(0.8 * 2, 15, 0, 0.5)
        groups = sample(shifted, 200, 8).reshape(20, 10)
        assert any(v.in_control is False for v in monitor_stream(groups, lim, 0, 0.5, 0.5))

    def test_phase1_self_consistency(self):
        # IC Phase-II data against fresh limits rarely signal
        signals = 0
        for s in range(5):
            lim = build_limits(phase1(s), 0, 0.5, ChartConfig(p=0.5, boot_reps=1000, seed=s))
            groups = phase1(100 + s).observations
            signals += sum(v.in_control is False for v in monitor_stream(groups, lim, 0, 0.5, 0.5))
        assert signals <= 2

    def test_short_subgroup(self):
        with pytest.raises(DataError):
            evaluate_subgroup([0.2], ControlLimits.fixed(0.1, 0.3), 0, 0.5, 0.5)

    def test_out_of_support(self):
        with pytest.raises(DataError):
            evaluate_subgroup([0.2, 0.7], ControlLimits.fixed(0.1, 0.3), 0, 0.5, 0.5)

    def test_model_percentile_used(self):
        x = sample(IC, 10, 9)
        v = evaluate_subgroup(x, ControlLimits.fixed(0.0, 0.5), 0, 0.5, 0.5)
        assert v.statistic != pytest.approx(float(np.median(x)), abs=1e-12)
        assert 0 < v.statistic < quantile(0.999, IC)
