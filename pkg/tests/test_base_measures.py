import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from dpglm import base_measures as bm
from dpglm import oracle as orc
from dpglm.core import GaussianDim, GaussianGlm
from dpglm.errors import NonConjugateBase

from helpers import mean_and_se


def _nig_base(d=1, a=2.0, b=1.0, lam=0.0, nu=1.0, p=None):
    p = p if p is not None else d + 1
    return bm.BaseMeasureSpec(tuple(bm.NIG(a, b, lam, nu) for _ in range(d)),
                              bm.MVNIG(np.zeros(p), np.eye(p), 2.0, 1.0))


def _members_from(base, x, y, p):
    design = np.column_stack([np.ones(len(y))] + [x[:, j] for j in range(x.shape[1])])
    design = design[:, :p]
    return bm.Members(x, design, np.asarray(y, dtype=np.float64))


class TestSamplePrior:
    def test_tight_prior_concentrates_mean(self):
        base = bm.BaseMeasureSpec((bm.NIG(2.0, 1e-8, 1.7, 1e12),),
                                  bm.MVNIG(np.zeros(2), np.eye(2), 2.0, 1.0))
        rng = np.random.default_rng(0)
        for _ in range(50):
            params = bm.sample_prior(base, rng)
            assert abs(params.theta_x[0].mu - 1.7) < 1e-4

    def test_dirichlet_draw_on_simplex(self):
        base = bm.BaseMeasureSpec((bm.DirichletLevels((1.0, 1.0, 1.0)),),
                                  bm.MVNIG(np.zeros(1), np.eye(1), 2.0, 1.0))
        rng = np.random.default_rng(1)
        for _ in range(100):
            probs = bm.sample_prior(base, rng).theta_x[0]
            assert abs(probs.sum() - 1.0) < 1e-12
            assert np.all(probs >= 0)

    def test_lognormal_variance_median(self):
        # log(sigma2) ~ N(-3, 2): the variance median is exp(-3)
        base = bm.BaseMeasureSpec(
            (bm.LogNormalMeanVar(0.0, 1.0, -3.0, math.sqrt(2.0)),),
            bm.IndependentGaussians(np.zeros(2), np.ones(2), dispersion=(0.0, 1.0)))
        rng = np.random.default_rng(2)
        draws = np.array([bm.sample_prior(base, rng).theta_x[0].sigma2
                          for _ in range(100_000)])
        median = float(np.median(draws))
        assert abs(median - math.exp(-3.0)) / math.exp(-3.0) < 0.05


class TestCovariatePredictive:
    def test_prior_predictive_matches_quadrature(self):
        # empty member set: Student-t with df 2, center 0, scale sqrt(2)
        part = bm.NIG(1.0, 1.0, 0.0, 1.0)
        df, loc, scale2 = bm.nig_predictive_params(part, 0, 0.0, 0.0)
        assert (df, loc, scale2) == (2.0, 0.0, 2.0)
        closed = bm.nig_predictive_logpdf(part, 0, 0.0, 0.0, 0.0)
        # frozen from the quadrature oracle; equals log(1/4)
        assert abs(closed - math.log(0.25)) < 1e-12
        numeric = orc.nig_log_marginal_quad(part, 1, 0.0, 0.0)
        assert abs(closed - numeric) < 1e-9

    def test_polya_urn_counts(self):
        part = bm.DirichletLevels((1.0, 1.0))
        counts = np.array([3.0, 1.0])
        assert abs(bm.dirichlet_predictive_logpdf(part, counts, 0)
                   - math.log(4.0 / 6.0)) < 1e-12

    def test_lognormal_part_rejected(self):
        base = bm.BaseMeasureSpec(
            (bm.LogNormalMeanVar(0.0, 1.0, -1.0, 1.0),),
            bm.MVNIG(np.zeros(2), np.eye(2), 2.0, 1.0))
        stats = bm.SufficientStats.empty(base, 2, True)
        with pytest.raises(NonConjugateBase):
            bm.covariate_posterior_predictive_logdensity(base, stats,
                                                         np.array([0.0]))

    @given(st.lists(st.floats(-3, 3), min_size=0, max_size=20),
           st.floats(-2, 2))
    @settings(max_examples=60, deadline=None)
    def test_ratio_identity_continuous(self, xs, x_new):
        base = _nig_base(d=1, p=1)
        stats = bm.SufficientStats.empty(base, 1, True)
        for v in xs:
            stats.add(np.array([v]), np.array([1.0]), 0.0)
        pred = bm.covariate_dim_predictive_logdensity(base, stats, 0, x_new)
        with_x = stats.copy()
        with_x.add(np.array([x_new]), np.array([1.0]), 0.0)
        ratio = (bm.covariate_log_marginal(base, with_x)
                 - bm.covariate_log_marginal(base, stats))
        assert abs(pred - ratio) < 1e-10

    @given(st.lists(st.integers(0, 2), min_size=0, max_size=20),
           st.integers(0, 2))
    @settings(max_examples=60, deadline=None)
    def test_ratio_identity_categorical(self, levels, new_level):
        part = bm.DirichletLevels((0.7, 1.0, 2.5))
        counts = np.bincount(np.asarray(levels, dtype=int), minlength=3).astype(float)
        pred = bm.dirichlet_predictive_logpdf(part, counts, new_level)
        plus = counts.copy()
        plus[new_level] += 1
        ratio = (bm.dirichlet_log_marginal(part, plus)
                 - bm.dirichlet_log_marginal(part, counts))
        assert abs(pred - ratio) < 1e-10

    def test_predictive_integrates_to_one(self):
        part = bm.NIG(2.0, 1.5, 0.3, 2.0)
        df, loc, scale2 = bm.nig_predictive_params(part, 3, 1.2, 2.9)
        val, _ = integrate.quad(
            lambda x: math.exp(bm.nig_predictive_logpdf(part, 3, 1.2, 2.9, x)),
            loc - 60 * math.sqrt(scale2), loc + 60 * math.sqrt(scale2))
        assert abs(val - 1.0) < 1e-4
        dpart = bm.DirichletLevels((0.5, 1.0, 2.0))
        counts = np.array([2.0, 0.0, 1.0])
        total = sum(math.exp(bm.dirichlet_predictive_logpdf(dpart, counts, k))
                    for k in range(3))
        assert abs(total - 1.0) < 1e-12


class TestResponsePredictive:
    def test_empty_cluster_centered_on_prior(self):
        base = _nig_base(d=1)
        stats = bm.SufficientStats.empty(base, 2, True)
        for xq in (0.0, -1.3, 2.2):
            xt = np.array([1.0, xq])
            assert bm.mvnig_posterior_mean_at(base.response_part, stats, xt) == 0.0

    def test_single_member_shrinkage_against_quadrature(self):
        # intercept-only response with one member (y = 1): the predictive
        # mode lies strictly between 0 and 1, and the density matches full
        # numeric integration over (coefficient, variance)
        part = bm.MVNIG(np.zeros(1), np.eye(1), 2.0, 1.0)
        base = bm.BaseMeasureSpec((), part)
        stats = bm.SufficientStats.empty(base, 1, True)
        stats.add(np.zeros(0), np.array([1.0]), 1.0)
        xt = np.array([1.0])
        ys = np.linspace(-2.0, 3.0, 101)
        dens = [bm.mvnig_predictive_logpdf(part, stats, xt, y) for y in ys]
        mode = ys[int(np.argmax(dens))]
        assert 0.0 < mode < 1.0
        design = np.array([[1.0]])
        yvec = np.array([1.0])
        base_marg = orc.mvnig_log_marginal_quad_full(part, design, yvec)
        for y_new in (-0.5, 0.4, 1.1):
            closed = bm.mvnig_predictive_logpdf(part, stats, xt, y_new)
            numeric = orc.mvnig_log_marginal_quad_full(
                part, np.vstack([design, xt]), np.append(yvec, y_new)) - base_marg
            assert abs(closed - numeric) < 1e-6

    def test_ratio_identity(self):
        rng = np.random.default_rng(5)
        base = _nig_base(d=1)
        x = rng.normal(size=(6, 1))
        y = 0.4 * x[:, 0] + rng.normal(0, 0.5, 6)
        members = _members_from(base, x, y, 2)
        stats = bm.SufficientStats.from_members(base, members, True)
        x_new, y_new = 0.7, -0.2
        xt = np.array([1.0, x_new])
        pred = bm.response_posterior_predictive_logdensity(base, stats, xt, y_new)
        plus = stats.copy()
        plus.add(np.array([x_new]), xt, y_new)
        ratio = (bm.response_log_marginal(base, plus)
                 - bm.response_log_marginal(base, stats))
        assert abs(pred - ratio) < 1e-10

    def test_nonconjugate_response_rejected(self):
        base = bm.BaseMeasureSpec((bm.NIG(2, 1, 0, 1),),
                                  bm.IndependentGaussians(np.zeros(2), np.ones(2),
                                                          dispersion=(0.0, 1.0)))
        stats = bm.SufficientStats.empty(base, 2, False)
        with pytest.raises(NonConjugateBase):
            bm.response_posterior_predictive_logdensity(base, stats,
                                                        np.array([1.0, 0.0]), 0.0)

    def test_predictive_integrates_to_one(self):
        base = _nig_base(d=1)
        rng = np.random.default_rng(8)
        x = rng.normal(size=(4, 1))
        y = rng.normal(size=4)
        stats = bm.SufficientStats.from_members(base, _members_from(base, x, y, 2),
                                                True)
        xt = np.array([1.0, 0.5])
        df, loc, scale2 = bm.mvnig_predictive_params(base.response_part, stats, xt)
        val, _ = integrate.quad(
            lambda yv: math.exp(bm.mvnig_predictive_logpdf(base.response_part,
                                                           stats, xt, yv)),
            loc - 80 * math.sqrt(scale2), loc + 80 * math.sqrt(scale2), limit=200)
        assert abs(val - 1.0) < 1e-4


class TestLogMarginal:
    def test_empty_set_is_zero(self):
        base = _nig_base(d=1)
        stats = bm.SufficientStats.empty(base, 2, True)
        assert bm.log_marginal_likelihood(base, stats) == 0.0

    def test_single_datum_chains_to_predictive(self):
        base = _nig_base(d=1, p=1)
        stats = bm.SufficientStats.empty(base, 1, True)
        empty_pred = bm.covariate_dim_predictive_logdensity(base, stats, 0, 0.9)
        stats.add(np.array([0.9]), np.array([1.0]), 0.0)
        assert abs(bm.covariate_log_marginal(base, stats) - empty_pred) < 1e-12

    def test_three_points_match_quadrature(self):
        part = bm.NIG(1.5, 0.8, -0.4, 2.0)
        xs = np.array([0.2, -1.0, 0.7])
        closed = bm.nig_log_marginal(part, 3, float(xs.sum()),
                                     float((xs * xs).sum()))
        numeric = orc.nig_log_marginal_quad(part, 3, float(xs.sum()),
                                            float((xs * xs).sum()))
        assert abs(closed - numeric) < 1e-6


class TestSufficientStats:
    @given(st.lists(st.tuples(st.floats(-3, 3), st.floats(-3, 3)),
                    min_size=0, max_size=24),
           st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_additive_and_order_free(self, pairs, seed):
        base = _nig_base(d=1)
        rows = np.array([[p[0]] for p in pairs]).reshape(len(pairs), 1)
        ys = np.array([p[1] for p in pairs])
        design = np.column_stack([np.ones(len(pairs)), rows[:, 0]]) \
            if len(pairs) else np.zeros((0, 2))
        members = bm.Members(rows, design, ys)
        stats = bm.SufficientStats.from_members(base, members, True)
        cut = len(pairs) // 2
        left = bm.SufficientStats.from_members(
            base, bm.Members(rows[:cut], design[:cut], ys[:cut]), True)
        right = bm.SufficientStats.from_members(
            base, bm.Members(rows[cut:], design[cut:], ys[cut:]), True)
        merged = left.merged(right)
        np.testing.assert_allclose(merged.cont_sum, stats.cont_sum, atol=1e-9)
        np.testing.assert_allclose(merged.xtx, stats.xtx, atol=1e-9)
        perm = np.random.default_rng(seed).permutation(len(pairs))
        shuffled = bm.SufficientStats.from_members(
            base, bm.Members(rows[perm], design[perm], ys[perm]), True)
        np.testing.assert_allclose(shuffled.cont_ssq, stats.cont_ssq, atol=1e-9)
        np.testing.assert_allclose(shuffled.xty, stats.xty, atol=1e-9)
        assert abs(shuffled.yty - stats.yty) < 1e-9

    def test_add_remove_round_trip(self):
        base = _nig_base(d=1)
        stats = bm.SufficientStats.empty(base, 2, True)
        stats.add(np.array([1.5]), np.array([1.0, 1.5]), 2.0)
        stats.add(np.array([-0.5]), np.array([1.0, -0.5]), 1.0)
        stats.remove(np.array([1.5]), np.array([1.0, 1.5]), 2.0)
        assert stats.n == 1
        np.testing.assert_allclose(stats.cont_sum, [-0.5], atol=1e-12)


class TestPosteriorSampling:
    def test_tight_posterior_recovers_mean(self):
        rng = np.random.default_rng(11)
        base = _nig_base(d=1)
        x = rng.normal(2.0, 0.5, (10_000, 1))
        y = np.zeros(10_000)
        design = np.column_stack([np.ones(10_000), x[:, 0]])
        members = bm.Members(x, design, y)
        params = bm.posterior_sample_params(base, members,
                                            bm.sample_prior(base, rng), rng)
        assert abs(params.theta_x[0].mu - 2.0) < 0.05

    def test_dirichlet_posterior_mean(self):
        base = bm.BaseMeasureSpec((bm.DirichletLevels((1.0, 1.0)),),
                                  bm.MVNIG(np.zeros(1), np.eye(1), 2.0, 1.0))
        rng = np.random.default_rng(12)
        x = np.zeros((10, 1))  # ten observations of level 0
        members = bm.Members(x, np.ones((10, 1)), np.zeros(10))
        draws = np.array([
            bm.posterior_sample_params(base, members, bm.sample_prior(base, rng),
                                       rng).theta_x[0][0]
            for _ in range(4000)])
        assert abs(draws.mean() - 11.0 / 12.0) < 0.02

    def test_refresh_preserves_posterior_conjugate(self):
        # forward draws (atom, data) vs iterating refresh with redrawn data
        rng = np.random.default_rng(13)
        base = _nig_base(d=1)
        n = 5
        fwd_mu = []
        for _ in range(4000):
            atom = bm.sample_prior(base, rng)
            fwd_mu.append(atom.theta_x[0].mu)
        fwd_mean, fwd_se = mean_and_se(fwd_mu, 40)

        atom = bm.sample_prior(base, rng)
        chain_mu = []
        for _ in range(4000):
            gd = atom.theta_x[0]
            x = rng.normal(gd.mu, math.sqrt(gd.sigma2), (n, 1))
            design = np.column_stack([np.ones(n), x[:, 0]])
            y = design @ atom.theta_y.beta + \
                math.sqrt(atom.theta_y.sigma2) * rng.standard_normal(n)
            members = bm.Members(x, design, y)
            atom = bm.posterior_sample_params(base, members, atom, rng)
            chain_mu.append(atom.theta_x[0].mu)
        ch_mean, ch_se = mean_and_se(chain_mu, 40)
        z = (ch_mean - fwd_mean) / math.hypot(fwd_se, ch_se)
        assert abs(z) < 4.0
