import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize, stats

from tbetachart import datasets
from tbetachart.dist import TbetaParams, quantile, sample
from tbetachart.errors import ConvergenceError, DataError, DomainError
from tbetachart.estimate import (FitResult, SubgroupData, fit_mle, fit_percentiles, ks_pvalue,
                                 ks_statistic, log_likelihood, moment_start, percentile_estimate)

from .oracles import tbeta_pdf

RH07 = datasets.load("rh-may-2007")
RH08 = datasets.load("rh-may-2008")


class TestSubgroupData:
    def test_from_flat(self):
        d = SubgroupData.from_flat(RH07, 10)
        assert (d.k, d.n, d.m) == (3, 10, 30)
        assert np.array_equal(d.flat, RH07)
        assert np.array_equal(d.observations[1], RH07[10:20])

    def test_indivisible(self):
        with pytest.raises(DataError):
            SubgroupData.from_flat(RH07, 7)

    def test_shape_rules(self):
        with pytest.raises(DataError):
            SubgroupData(np.ones(5))
        with pytest.raises(DataError):
            SubgroupData(np.ones((3, 1)))
        with pytest.raises(DataError):
            SubgroupData([[0.1, math.nan]])

    def test_immutable(self):
        d = SubgroupData(np.full((2, 2), 0.5))
        with pytest.raises(ValueError):
            d.observations[0, 0] = 0.1


class TestLogLikelihood:
    def test_uniform(self):
        assert log_likelihood([0.5], TbetaParams(1, 1)) == pytest.approx(0.0, abs=1e-15)

    def test_truncated_uniform(self):
        ll = log_likelihood([0.2, 0.4], TbetaParams(1, 1, 0, 0.5))
        assert ll == pytest.approx(2 * math.log(2), abs=1e-12)

    def test_rh2007_against_quadrature_pdf(self):
        ref = sum(math.log(tbeta_pdf(x, 7.448, 2.154, 0.3, 1.0)) for x in RH07)
        assert log_likelihood(RH07, TbetaParams(7.448, 2.154, 0.3, 1.0)) == pytest.approx(ref, abs=1e-6)

    def test_grouping_irrelevant(self):
        p = TbetaParams(7.448, 2.154, 0.3, 1.0)
        assert log_likelihood(SubgroupData.from_flat(RH07, 10), p) == log_likelihood(RH07, p)

    def test_support_violation_lists_values(self):
        with pytest.raises(DataError, match="0.9"):
            log_likelihood([0.1, 0.9], TbetaParams(1, 1, 0, 0.5))


class TestFit:
    def test_rh2007(self):
        fit = fit_mle(SubgroupData.from_flat(RH07, 10), 0.3, 1.0)
        assert fit.converged
        assert fit.params.theta1 == pytest.approx(7.448, abs=0.01)
        assert fit.params.theta2 == pytest.approx(2.154, abs=0.01)

    def test_rh2008(self):
        fit = fit_mle(RH08, 0.3, 1.0)
        assert fit.params.theta1 == pytest.approx(1.344, abs=0.01)
        assert fit.params.theta2 == pytest.approx(1.091, abs=0.01)

    def test_matches_generic_optimizer(self):
        # independent optimum: scipy L-BFGS-B on the quadrature-free log-likelihood
        def nll(t):
            return -log_likelihood(RH07, TbetaParams(t[0], t[1], 0.3, 1.0))
        ref = optimize.minimize(nll, [5.0, 2.0], method="L-BFGS-B", bounds=[(0.1, 100)] * 2,
                                options={"ftol": 1e-14, "gtol": 1e-10})
        fit = fit_mle(RH07, 0.3, 1.0)
        assert fit.params.theta1 == pytest.approx(ref.x[0], rel=1e-4)
        assert fit.params.theta2 == pytest.approx(ref.x[1], rel=1e-4)
        assert fit.loglik >= -ref.fun - 1e-9

    def test_recovery(self):
        truth = TbetaParams(2, 15, 0, 0.5)
        fit = fit_mle(sample(truth, 10_000, 11), 0, 0.5)
        assert fit.params.theta1 == pytest.approx(2, rel=0.05)
        assert fit.params.theta2 == pytest.approx(15, rel=0.05)

    def test_init_irrelevant(self):
        a = fit_mle(RH07, 0.3, 1.0, init=(1.0, 1.0))
        b = fit_mle(RH07, 0.3, 1.0, init=(50.0, 20.0))
        assert a.params.theta1 == pytest.approx(b.params.theta1, rel=1e-5)

    def test_degenerate(self):
        with pytest.raises(DataError):
            fit_mle(np.full(10, 0.4), 0, 1)

    def test_bad_init(self):
        with pytest.raises(DomainError):
            fit_mle(RH07, 0.3, 1.0, init=(0.0, 1.0))

    def test_outside_support(self):
        with pytest.raises(DataError):
            fit_mle(RH07, 0.5, 1.0)

    def test_moment_start_clamped(self):
        t1, t2 = moment_start(np.array([0.1, 0.1000001]), 0, 1)
        assert 0.1 <= t1 <= 100 and 0.1 <= t2 <= 100

    @settings(max_examples=25, deadline=None)
    @given(st.floats(0.5, 20), st.floats(0.5, 20), st.integers(0, 10_000))
    def test_batch_agrees_with_single(self, t1, t2, seed):
        x = sample(TbetaParams(t1, t2), 40, seed).reshape(2, 20)
        xi, ok = fit_percentiles(x, 0, 1, [0.5])
        for row, est, good in zip(x, xi[:, 0], ok):
            fit = fit_mle(row, 0, 1)
            if good and fit.converged:
                assert est == pytest.approx(quantile(0.5, fit.params), abs=1e-6)


class TestPercentile:
    def test_rh2008(self):
        fit = fit_mle(RH08, 0.3, 1.0)
        assert percentile_estimate(fit, 0.9) == pytest.approx(0.926, abs=1e-3)

    def test_rh2007_model_percentile(self):
        # the model percentile; the published 0.922 is the empirical one (see ledger)
        fit = fit_mle(RH07, 0.3, 1.0)
        assert percentile_estimate(fit, 0.9) == pytest.approx(0.92629, abs=1e-4)
        assert np.percentile(RH07, 90) == pytest.approx(0.922, abs=1e-9)

    def test_symmetric(self):
        fit = FitResult(TbetaParams(4, 4), 0.0, True, 1)
        assert percentile_estimate(fit, 0.5) == pytest.approx(0.5, abs=1e-12)

    def test_unconverged(self):
        with pytest.raises(ConvergenceError):
            percentile_estimate(FitResult(TbetaParams(4, 4), 0.0, False, 1), 0.5)

    def test_failed_rows_are_nan(self):
        x = np.vstack([np.full(10, 0.3), sample(TbetaParams(2, 3), 10, 1)])
        xi, ok = fit_percentiles(x, 0, 1, [0.5, 0.9])
        assert ok.tolist() == [False, True]
        assert np.isnan(xi[0]).all() and np.isfinite(xi[1]).all()


class TestKS:
    def test_rh2007(self):
        fit = fit_mle(RH07, 0.3, 1.0)
        assert ks_statistic(RH07, fit.params) == pytest.approx(0.1138, abs=1e-3)

    def test_rh2008(self):
        fit = fit_mle(RH08, 0.3, 1.0)
        assert ks_statistic(RH08, fit.params) == pytest.approx(0.127, abs=1e-3)

    def test_exact_quantiles(self):
        p = TbetaParams(2, 15, 0, 0.5)
        n = 25
        x = quantile((np.arange(1, n + 1) - 0.5) / n, p)
        assert ks_statistic(x, p) == pytest.approx(0.5 / n, abs=1e-9)

    def test_pvalue_zero_stat(self):
        assert ks_pvalue(0.0, 30, TbetaParams(2, 3)) == 1.0

    def test_pvalue_max_stat(self):
        assert ks_pvalue(1.0, 30, TbetaParams(2, 3), reps=1000) <= 1 / 1000

    @pytest.mark.xfail(strict=True, reason="refitting each replicate gives about 0.42; the "
                       "published 0.83 matches the known-parameter test (see ledger)")
    def test_pvalue_rh2007(self):
        fit = fit_mle(RH07, 0.3, 1.0)
        pv = ks_pvalue(ks_statistic(RH07, fit.params), 30, fit.params, reps=2000, seed=0)
        assert 0.6 <= pv <= 0.95

    def test_pvalue_rh2007_known_parameters(self):
        fit = fit_mle(RH07, 0.3, 1.0)
        pv = ks_pvalue(ks_statistic(RH07, fit.params), 30, fit.params, reps=2000, seed=0,
                       refit=False)
        assert 0.6 <= pv <= 0.95

    def test_known_parameter_pvalue_matches_exact_law(self):
        # exact one-sample K-S distribution as the oracle; binomial error at 20000 reps
        p = TbetaParams(2, 15, 0, 0.5)
        pv = ks_pvalue(0.2, 30, p, reps=20_000, seed=1, refit=False)
        ref = stats.kstwo.sf(0.2, 30)
        assert abs(pv - ref) < 4 * math.sqrt(ref * (1 - ref) / 20_000)

    def test_refit_pvalue_smaller(self):
        # estimating the shapes pulls the null K-S distances down
        p = TbetaParams(2, 15, 0, 0.5)
        assert ks_pvalue(0.15, 30, p, seed=2) < ks_pvalue(0.15, 30, p, seed=2, refit=False)

    def test_pvalue_deterministic(self):
        p = TbetaParams(2, 3)
        assert ks_pvalue(0.1, 20, p, seed=4) == ks_pvalue(0.1, 20, p, seed=4)

    def test_pvalue_reps_floor(self):
        with pytest.raises(DomainError):
            ks_pvalue(0.1, 20, TbetaParams(2, 3), reps=999)
