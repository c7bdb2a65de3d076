import math

import numpy as np
import pytest

from dpglm import base_measures as bm
from dpglm.core import (ClusterEntry, ClusterParams, DataSchema, Dataset,
                        FixedAlpha, GaussianDim, GaussianGlm, ModelSpec,
                        MultinomialGlm, PosteriorSample, categorical_response,
                        continuous, continuous_response)
from dpglm.errors import DegenerateWeights
from dpglm.gibbs import ChainConfig, run_chain
from dpglm.predict import (PriorTermEstimator, classify,
                           conditional_expectation_given_sample, predict,
                           predictive_band)

from conftest import conjugate_gaussian_spec, toy_gaussian_dataset


def _gauss_schema():
    return DataSchema((("x", continuous()), ("y", continuous_response())), 1)


def _sample_with(clusters, alpha=1.0):
    n = sum(e.count for e in clusters.values())
    labels = np.concatenate([[cid] * e.count for cid, e in clusters.items()])
    return PosteriorSample(labels.astype(np.int64), clusters, alpha, 0)


def _gauss_cluster(mu, sigma2_x, beta, sigma2_y, count):
    return ClusterEntry(ClusterParams([GaussianDim(mu, sigma2_x)],
                                      GaussianGlm(np.asarray(beta, dtype=float),
                                                  sigma2_y)), count)


class TestConditionalExpectation:
    def test_vanishing_concentration_leaves_single_cluster(self):
        spec = conjugate_gaussian_spec(alpha=1e-12)
        sample = _sample_with({0: _gauss_cluster(0.0, 1.0, [0.0, 1.0], 1.0, 5)},
                              alpha=1e-12)
        for xq in (-1.2, 0.0, 0.7):
            val = conditional_expectation_given_sample(
                sample, np.array([xq]), _gauss_schema(), spec)
            assert abs(val - xq) < 1e-9

    def test_mirror_symmetric_clusters_cancel(self):
        spec = conjugate_gaussian_spec()
        clusters = {0: _gauss_cluster(1.0, 0.5, [1.0, 0.0], 1.0, 4),
                    1: _gauss_cluster(-1.0, 0.5, [-1.0, 0.0], 1.0, 4)}
        val = conditional_expectation_given_sample(
            _sample_with(clusters), np.array([0.0]), _gauss_schema(), spec)
        assert abs(val) < 1e-12

    def test_value_in_convex_hull(self):
        rng = np.random.default_rng(0)
        spec = conjugate_gaussian_spec()
        for _ in range(30):
            clusters = {}
            means = []
            for cid in range(int(rng.integers(1, 5))):
                beta = rng.normal(0, 1, 2)
                clusters[cid] = _gauss_cluster(rng.normal(), rng.uniform(0.2, 2),
                                               beta, rng.uniform(0.2, 2),
                                               int(rng.integers(1, 6)))
            xq = rng.normal()
            for cid, e in clusters.items():
                means.append(e.params.theta_y.beta[0]
                             + e.params.theta_y.beta[1] * xq)
            prior_mean = 0.0  # analytic fresh-option mean at zero-centered prior
            means.append(prior_mean)
            val = conditional_expectation_given_sample(
                _sample_with(clusters), np.array([xq]), _gauss_schema(), spec)
            assert min(means) - 1e-9 <= val <= max(means) + 1e-9

    def test_degenerate_query_raises(self):
        spec = conjugate_gaussian_spec()
        sample = _sample_with({0: _gauss_cluster(0.0, 1.0, [0.0, 1.0], 1.0, 3)})
        with pytest.raises(DegenerateWeights):
            conditional_expectation_given_sample(
                sample, np.array([1e200]), _gauss_schema(), spec,
                PriorTermEstimator("monte_carlo", 8))

    def test_exact_enumeration_agreement_small_n(self):
        # averaging the per-sample value over the exact partition posterior
        # (atoms integrated by Monte Carlo) approaches the enumeration value;
        # the two estimators differ slightly in the tails, so probe centrally
        from dpglm import oracle as orc
        from dpglm.glm import design_layout, design_matrix

        data = toy_gaussian_dataset(n=4, seed=17)
        spec = conjugate_gaussian_spec()
        schema = data.schema
        layout = design_layout(schema, spec)
        design = design_matrix(data.rows, layout)
        base = spec.base_measure
        xq = float(np.median(data.rows[:, 0]))
        exact = orc.exact_posterior_expectation(data, spec, 1.0, np.array([xq]))

        rng = np.random.default_rng(5)
        logw = []
        part_values = []
        T = 400
        for blocks in orc.enumerate_partitions(4):
            lw = orc.crp_partition_logprior(blocks, 4, 1.0)
            stats_list = []
            for b in blocks:
                members = bm.Members(data.rows[b], design[b],
                                     np.asarray(data.responses, float)[b])
                st = bm.SufficientStats.from_members(base, members, True)
                lw += bm.log_marginal_likelihood(base, st)
                stats_list.append((b, st))
            logw.append(lw)
            acc = 0.0
            for _ in range(T):
                clusters = {}
                for cid, (b, st) in enumerate(stats_list):
                    theta_x = [bm.sample_nig_posterior(
                        base.covariate_parts[0], st.n, st.cont_sum[0],
                        st.cont_ssq[0], rng)]
                    theta_y = bm.sample_mvnig_posterior(base.response_part, st,
                                                        rng)
                    clusters[cid] = ClusterEntry(ClusterParams(theta_x, theta_y),
                                                 len(b))
                acc += conditional_expectation_given_sample(
                    _sample_with(clusters), np.array([xq]), schema, spec)
            part_values.append(acc / T)
        logw = np.asarray(logw)
        w = np.exp(logw - logw.max())
        w /= w.sum()
        estimate = float(np.dot(w, part_values))
        assert abs(estimate - exact) < 0.02


class TestPredict:
    def test_single_sample_identity(self):
        spec = conjugate_gaussian_spec()
        sample = _sample_with({0: _gauss_cluster(0.2, 1.0, [0.5, 0.8], 1.0, 4)})
        single = conditional_expectation_given_sample(
            sample, np.array([0.3]), _gauss_schema(), spec)
        est = predict([sample], np.array([0.3]), _gauss_schema(), spec)
        assert est.mean == single
        assert len(est.per_sample_means) == 1

    def test_duplicated_samples_leave_mean_unchanged(self):
        spec = conjugate_gaussian_spec()
        sample_a = _sample_with({0: _gauss_cluster(0.0, 1.0, [0.1, 0.4], 1.0, 3)})
        sample_b = _sample_with({0: _gauss_cluster(0.5, 0.7, [-0.2, 1.0], 0.8, 3)})
        once = predict([sample_a, sample_b], np.array([0.1]), _gauss_schema(), spec)
        twice = predict([sample_a, sample_b] * 2, np.array([0.1]),
                        _gauss_schema(), spec)
        assert abs(once.mean - twice.mean) < 1e-15

    def test_shift_equivariance(self):
        # shifting every intercept and the prior center by c shifts every
        # prediction by exactly c, in both fresh-option modes
        c = 3.7
        schema = _gauss_schema()
        spec = conjugate_gaussian_spec()
        base = spec.base_measure
        shifted_base = bm.BaseMeasureSpec(
            base.covariate_parts,
            bm.MVNIG(base.response_part.m0 + np.array([c, 0.0]),
                     base.response_part.V, base.response_part.shape,
                     base.response_part.scale))
        from dataclasses import replace
        spec_shift = replace(spec, base_measure=shifted_base)

        clusters = {0: _gauss_cluster(0.0, 1.0, [0.4, 1.1], 1.0, 3),
                    1: _gauss_cluster(1.0, 0.5, [-0.3, 0.2], 0.6, 2)}
        shifted = {cid: _gauss_cluster(e.params.theta_x[0].mu,
                                       e.params.theta_x[0].sigma2,
                                       e.params.theta_y.beta + np.array([c, 0.0]),
                                       e.params.theta_y.sigma2, e.count)
                   for cid, e in clusters.items()}
        for mode in (PriorTermEstimator("analytic"),
                     PriorTermEstimator("monte_carlo", 40)):
            a = predict([_sample_with(clusters)], np.array([0.4]), schema, spec,
                        prior_est=mode, seed=11)
            b = predict([_sample_with(shifted)], np.array([0.4]), schema,
                        spec_shift, prior_est=mode, seed=11)
            assert abs((b.mean - a.mean) - c) < 1e-9

    def test_monte_carlo_variance_shrinks_inversely(self, warm_kernel):
        data = toy_gaussian_dataset(n=8, seed=19)
        spec = conjugate_gaussian_spec()
        cfg = ChainConfig(burn_in=200, thin=2, total_iterations=16200, seed=4)
        result = run_chain(data, spec, cfg)
        xq = np.array([float(np.median(data.rows[:, 0]))])
        vals = np.array([conditional_expectation_given_sample(
            s, xq, data.schema, spec) for s in result.samples])
        sizes = [25, 50, 100, 200]
        variances = []
        for M in sizes:
            chunks = vals[:(len(vals) // M) * M].reshape(-1, M).mean(axis=1)
            variances.append(chunks.var(ddof=1))
        slope = np.polyfit(np.log(sizes), np.log(variances), 1)[0]
        assert -1.2 < slope < -0.8


class TestBand:
    def test_single_cluster_gaussian_band(self):
        spec = conjugate_gaussian_spec(alpha=1e-12)
        sample = _sample_with({0: _gauss_cluster(0.0, 1.0, [0.5, 1.0], 1.0,
                                                 10_000)}, alpha=1e-12)
        lo, hi = predictive_band([sample], np.array([1.0]), _gauss_schema(), spec,
                                 level=0.90, draws_per_sample=100_000, seed=0)
        eta = 1.5
        assert abs(lo - (eta - 1.645)) < 0.05
        assert abs(hi - (eta + 1.645)) < 0.05

    def test_full_level_clamped_and_covers(self):
        spec = conjugate_gaussian_spec(alpha=1e-12)
        theta = _gauss_cluster(0.0, 1.0, [0.0, 0.0], 1.0, 1000)
        sample = _sample_with({0: theta}, alpha=1e-12)
        lo, hi = predictive_band([sample], np.array([0.0]), _gauss_schema(), spec,
                                 level=1.0, draws_per_sample=200_000, seed=1)
        rng = np.random.default_rng(2)
        fresh = rng.standard_normal(100_000)
        coverage = np.mean((fresh >= lo) & (fresh <= hi))
        assert coverage >= 0.998

    def test_lower_never_exceeds_upper(self):
        spec = conjugate_gaussian_spec()
        sample = _sample_with({0: _gauss_cluster(0.0, 1.0, [0.2, 0.4], 0.5, 4)})
        lo, hi = predictive_band([sample], np.array([0.2]), _gauss_schema(), spec,
                                 draws_per_sample=50, seed=3)
        assert lo <= hi


class TestClassify:
    def _mn_spec(self, K=2, var=1.0):
        base = bm.BaseMeasureSpec(
            (bm.NIG(2.0, 1.0, 0.0, 1.0),),
            bm.IndependentGaussians(np.zeros((2, K)), np.full((2, K), var)))
        return ModelSpec("multinomial_logistic", ("gaussian_diag",), base,
                         FixedAlpha(1.0), num_classes=K)

    def _mn_schema(self, K=2):
        return DataSchema((("x", continuous()),
                           ("y", categorical_response(K))), 1)

    def test_all_zero_coefficients_tie_break(self):
        spec = self._mn_spec()
        clusters = {0: ClusterEntry(ClusterParams(
            [GaussianDim(0.0, 1.0)], MultinomialGlm(np.zeros((2, 2)))), 5)}
        cls, probs = classify([_sample_with(clusters)], np.array([0.3]),
                              self._mn_schema(), spec)
        np.testing.assert_allclose(probs, [0.5, 0.5], atol=0.02)
        assert cls == 0

    def test_dominant_cluster_probabilities(self):
        spec = self._mn_spec()
        logit = math.log(0.9 / 0.1)
        beta = np.zeros((2, 2))
        beta[0, 0] = logit
        clusters = {0: ClusterEntry(ClusterParams(
            [GaussianDim(0.0, 1e-6)], MultinomialGlm(beta)), 10_000)}
        sample = _sample_with(clusters, alpha=1e-12)
        cls, probs = classify([sample], np.array([0.0]), self._mn_schema(),
                              spec, prior_est=PriorTermEstimator("monte_carlo", 5))
        assert cls == 0
        assert abs(probs[0] - 0.9) < 1e-6

    def test_shared_intercept_shift_keeps_argmax(self):
        rng = np.random.default_rng(6)
        spec = self._mn_spec(K=3)
        schema = self._mn_schema(K=3)
        beta = rng.normal(0, 1, (2, 3))
        clusters = {0: ClusterEntry(ClusterParams(
            [GaussianDim(0.0, 1.0)], MultinomialGlm(beta)), 6)}
        cls_a, _ = classify([_sample_with(clusters)], np.array([0.4]), schema,
                            spec, seed=2)
        shifted = {0: ClusterEntry(ClusterParams(
            [GaussianDim(0.0, 1.0)],
            MultinomialGlm(beta + np.array([[5.0, 5.0, 5.0], [0, 0, 0]]))), 6)}
        cls_b, _ = classify([_sample_with(shifted)], np.array([0.4]), schema,
                            spec, seed=2)
        assert cls_a == cls_b

    def test_two_clusters_interleaved_accuracy(self):
        # two interleaved half-moons; joint mixture of Gaussians with local
        # logistic responses separates them
        rng = np.random.default_rng(7)
        n = 200
        t = rng.uniform(0, math.pi, n)
        upper = np.column_stack([np.cos(t), np.sin(t)])
        lower = np.column_stack([1.0 - np.cos(t), 0.5 - np.sin(t)])
        pick = rng.random(n) < 0.5
        pts = np.where(pick[:, None], upper, lower)
        pts += 0.12 * rng.standard_normal(pts.shape)
        labels = (~pick).astype(np.int64)

        schema = DataSchema((("x1", continuous()), ("x2", continuous()),
                             ("y", categorical_response(2))), 2)
        data = Dataset(schema, pts, labels)
        base = bm.BaseMeasureSpec(
            (bm.NIG(2.0, 0.5, 0.0, 0.5), bm.NIG(2.0, 0.5, 0.0, 0.5)),
            bm.IndependentGaussians(np.zeros((3, 2)), np.full((3, 2), 9.0)))
        spec = ModelSpec("multinomial_logistic",
                         ("gaussian_diag", "gaussian_diag"), base,
                         FixedAlpha(1.0), num_classes=2)
        cfg = ChainConfig(burn_in=400, thin=4, total_iterations=800, seed=8)
        result = run_chain(data, spec, cfg)
        correct = 0
        probe = rng.choice(n, 60, replace=False)
        for i in probe:
            cls, _ = classify(result.samples, pts[i], schema, spec, seed=1)
            correct += (cls == labels[i])
        assert correct / len(probe) > 0.85
