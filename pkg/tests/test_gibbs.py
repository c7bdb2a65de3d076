import math

import numpy as np
import pytest
from scipy import integrate

from dpglm import base_measures as bm
from dpglm import oracle as orc
from dpglm.core import (ClusterEntry, ClusterParams, DataSchema, Dataset,
                        FixedAlpha, GammaAlphaPrior, GaussianDim, GaussianGlm,
                        GibbsState, check_state, continuous,
                        continuous_response)
from dpglm.gibbs import (ChainConfig, MhKernel, assignment_logprobs,
                         crp_prior_logweights, escobar_west_alpha, gibbs_sweep,
                         init_state, mh_update_nonconjugate, resample_alpha,
                         run_chain)
from dpglm.glm import design_layout, design_matrix

from conftest import (conjugate_gaussian_spec, lognormal_gaussian_spec,
                      toy_gaussian_dataset)
from helpers import mean_and_se


def _state_with_counts(spec, counts, alpha, rng_seed=0):
    """Hand-built state with the given cluster sizes and prior-drawn atoms."""
    rng = np.random.default_rng(rng_seed)
    labels = np.concatenate([[cid] * c for cid, c in enumerate(counts)])
    clusters = {cid: ClusterEntry(bm.sample_prior(spec.base_measure, rng), c)
                for cid, c in enumerate(counts)}
    return GibbsState(labels.astype(np.int64), clusters, alpha, spec, rng,
                      len(counts))


class TestCrpWeights:
    def test_urn_arithmetic(self):
        spec = conjugate_gaussian_spec(alpha=1.0)
        state = _state_with_counts(spec, [2, 2], 1.0)
        # removing datum 3 leaves counts (2, 1); n = 4
        ids, logw, new_lw = crp_prior_logweights(state, 3)
        assert ids == [0, 1]
        np.testing.assert_allclose(np.exp(logw), [2 / 4, 1 / 4], atol=1e-12)
        assert abs(math.exp(new_lw) - 1 / 4) < 1e-12

    def test_huge_concentration_prefers_new(self):
        spec = conjugate_gaussian_spec(alpha=1e12)
        state = _state_with_counts(spec, [3, 2], 1e12)
        _, logw, new_lw = crp_prior_logweights(state, 0)
        assert abs(math.exp(new_lw) - 1.0) < 1e-9

    def test_weights_normalize(self):
        spec = conjugate_gaussian_spec(alpha=2.3)
        state = _state_with_counts(spec, [4, 1, 2], 2.3)
        _, logw, new_lw = crp_prior_logweights(state, 2)
        total = float(np.exp(logw).sum() + math.exp(new_lw))
        assert abs(total - 1.0) < 1e-12


class TestAssignment:
    def test_identical_clusters_get_equal_probability(self):
        # counts match after the datum under update is held out
        spec = lognormal_gaussian_spec()
        data = toy_gaussian_dataset(n=7, seed=1)
        state = _state_with_counts(spec, [4, 3], 1.0)
        shared = state.clusters[0].params
        state.clusters[1] = ClusterEntry(shared.copy(), 3)
        options, logp = assignment_logprobs(state, data, 0)
        assert abs(logp[0] - logp[1]) < 1e-12

    def test_near_cluster_dominates(self):
        spec = lognormal_gaussian_spec()
        data = toy_gaussian_dataset(n=6, seed=2)
        data.rows[0, 0] = 1.0
        data.responses[0] = 0.0
        state = _state_with_counts(spec, [3, 3], 1.0)
        near = ClusterParams([GaussianDim(1.0, 1e-4)],
                             GaussianGlm(np.zeros(2), 1.0))
        far = ClusterParams([GaussianDim(-50.0, 1e-4)],
                            GaussianGlm(np.zeros(2), 1.0))
        state.clusters[0] = ClusterEntry(near, 3)
        state.clusters[1] = ClusterEntry(far, 3)
        options, logp = assignment_logprobs(state, data, 0)
        assert math.exp(logp[0]) > 0.999

    def test_matches_exact_enumeration_at_n3(self):
        # p(label | others, data) from the sweep formula must equal the
        # ratio of exact joint marginals over the label's options
        spec = conjugate_gaussian_spec()
        data = toy_gaussian_dataset(n=3, seed=5)
        state = init_state(data, spec, np.random.default_rng(3))
        i = 1
        options, logp = assignment_logprobs(state, data, i)

        layout = design_layout(data.schema, spec)
        design = design_matrix(data.rows, layout)
        base = spec.base_measure

        def joint_log(labels):
            blocks = {}
            for idx, lab in enumerate(labels):
                blocks.setdefault(lab, []).append(idx)
            lp = orc.crp_partition_logprior(list(blocks.values()), 3, state.alpha)
            for idx_list in blocks.values():
                members = bm.Members(data.rows[idx_list], design[idx_list],
                                     np.asarray(data.responses,
                                                dtype=np.float64)[idx_list])
                st = bm.SufficientStats.from_members(base, members, True)
                lp += bm.log_marginal_likelihood(base, st)
            return lp

        labels = [int(v) for v in state.labels]
        fresh = max(labels) + 1
        exact = []
        for opt in options:
            cand = list(labels)
            cand[i] = fresh if isinstance(opt, tuple) else opt
            exact.append(joint_log(cand))
        exact = np.asarray(exact)
        exact -= exact.max()
        exact -= math.log(np.exp(exact).sum())
        np.testing.assert_allclose(logp, exact, atol=1e-9)

    def test_extreme_variances_stay_normalized(self):
        spec = lognormal_gaussian_spec()
        data = toy_gaussian_dataset(n=6, seed=3)
        state = _state_with_counts(spec, [3, 3], 1.0)
        state.clusters[0] = ClusterEntry(
            ClusterParams([GaussianDim(0.0, 1e-12)],
                          GaussianGlm(np.zeros(2), 1e-12)), 3)
        state.clusters[1] = ClusterEntry(
            ClusterParams([GaussianDim(0.0, 1e12)],
                          GaussianGlm(np.zeros(2), 1e12)), 3)
        _, logp = assignment_logprobs(state, data, 0)
        assert np.all(np.isfinite(logp))
        assert abs(np.exp(logp).sum() - 1.0) < 1e-12


class TestSweep:
    def test_single_datum_forced_cluster(self):
        spec = conjugate_gaussian_spec()
        data = toy_gaussian_dataset(n=1, seed=4)
        state = init_state(data, spec, np.random.default_rng(0))
        gibbs_sweep(state, data)
        assert state.num_clusters == 1
        (entry,) = state.clusters.values()
        assert entry.count == 1

    @pytest.mark.parametrize("sampler", ["auto", "neal8"])
    def test_invariants_hold_across_sweeps(self, sampler):
        spec = conjugate_gaussian_spec()
        data = toy_gaussian_dataset(n=14, seed=6)
        state = init_state(data, spec, np.random.default_rng(1))
        for _ in range(100):
            gibbs_sweep(state, data, sampler=sampler)
            assert check_state(state) == []

    def test_nonconjugate_sweep_invariants(self):
        spec = lognormal_gaussian_spec()
        data = toy_gaussian_dataset(n=10, seed=7)
        state = init_state(data, spec, np.random.default_rng(2))
        for _ in range(60):
            gibbs_sweep(state, data)
            assert check_state(state) == []

    def test_monotone_cluster_ids(self):
        spec = conjugate_gaussian_spec()
        data = toy_gaussian_dataset(n=12, seed=8)
        state = init_state(data, spec, np.random.default_rng(3))
        seen = set(state.clusters)
        for _ in range(50):
            before = state.next_cluster_id
            gibbs_sweep(state, data)
            fresh = set(state.clusters) - seen
            assert all(cid >= before for cid in fresh)
            seen |= set(state.clusters)


class TestConcentrationResampling:
    def test_strictly_positive(self):
        rng = np.random.default_rng(0)
        for _ in range(1_000_000):
            a = escobar_west_alpha(1.0, 3, 50, 1.0, 1.0, rng)
            if not a > 0:
                pytest.fail(f"nonpositive concentration draw {a}")

    def test_chain_matches_quadrature_mean(self):
        # iterate the two-step update at fixed (K, n); its stationary law is
        # p(alpha) * alpha^K * Gamma(alpha) / Gamma(alpha + n)
        K, n, shape, rate = 4, 60, 1.5, 0.8
        rng = np.random.default_rng(1)
        alpha = 1.0
        draws = np.empty(200_000)
        for t in range(len(draws)):
            alpha = escobar_west_alpha(alpha, K, n, shape, rate, rng)
            draws[t] = alpha

        def density(a):
            return math.exp((shape - 1.0) * math.log(a) - rate * a
                            + K * math.log(a) + math.lgamma(a)
                            - math.lgamma(a + n))

        norm, _ = integrate.quad(density, 1e-9, 80, limit=300)
        mean, _ = integrate.quad(lambda a: a * density(a), 1e-9, 80, limit=300)
        target = mean / norm
        assert abs(draws.mean() - target) / target < 0.02

    def test_more_clusters_push_concentration_up(self):
        rng = np.random.default_rng(2)
        lo = np.empty(10_000)
        hi = np.empty(10_000)
        a_lo, a_hi = 1.0, 1.0
        for t in range(10_000):
            a_lo = escobar_west_alpha(a_lo, 2, 50, 1.0, 1.0, rng)
            a_hi = escobar_west_alpha(a_hi, 20, 50, 1.0, 1.0, rng)
            lo[t], hi[t] = a_lo, a_hi
        assert hi.mean() / lo.mean() > 1.5

    def test_fixed_prior_is_identity(self):
        spec = conjugate_gaussian_spec(alpha=0.7)
        state = _state_with_counts(spec, [2, 2], 0.7)
        assert resample_alpha(state, FixedAlpha(0.7),
                              np.random.default_rng(0)) == 0.7


class TestMetropolisUpdates:
    def test_zero_step_is_identity(self):
        part = bm.LogNormalMeanVar(0.0, 1.0, -1.0, 1.0)
        theta = GaussianDim(0.3, 0.9)
        xs = np.random.default_rng(0).normal(0.3, 1.0, 20)
        out = mh_update_nonconjugate(theta, xs, part, 0.0,
                                     np.random.default_rng(1))
        assert out.sigma2 == theta.sigma2

    def test_adapted_acceptance_rate_in_band(self):
        # log-normal response variance on a single populated cluster
        rng = np.random.default_rng(3)
        n = 120
        design = np.column_stack([np.ones(n), rng.normal(0, 1, n)])
        beta = np.array([0.4, -0.8])
        y = design @ beta + 0.6 * rng.standard_normal(n)
        members = bm.Members(design[:, 1:2], design, y)
        part = bm.IndependentGaussians(np.zeros(2), np.ones(2),
                                       dispersion=(-1.0, 1.0))
        kernel = MhKernel(adapt=True)
        theta = GaussianGlm(beta.copy(), 1.0)
        for _ in range(2000):
            sigma2 = kernel.update_lognormal_response(part, members, theta, rng)
            theta = GaussianGlm(beta, sigma2)
        kernel.freeze()
        accepted = 0
        trials = 3000
        for _ in range(trials):
            old = theta.sigma2
            sigma2 = kernel.update_lognormal_response(part, members, theta, rng)
            accepted += (sigma2 != old)
            theta = GaussianGlm(beta, sigma2)
        rate = accepted / trials
        assert 0.2 <= rate <= 0.5

    def test_logistic_block_self_consistency(self):
        # same posterior, different seeds and step sizes: long-run means agree
        from dpglm.core import MultinomialGlm, categorical_response
        from dpglm.glm import design_layout
        from dpglm.core import ModelSpec
        rng = np.random.default_rng(4)
        n = 80
        x = rng.normal(0, 1, (n, 1))
        logits = 1.2 * x[:, 0] - 0.3
        probs = 1.0 / (1.0 + np.exp(-logits))
        y = (rng.random(n) < probs).astype(np.int64)
        schema = DataSchema((("x", continuous()),
                             ("y", categorical_response(2))), 1)
        base = bm.BaseMeasureSpec(
            (bm.NIG(2, 1, 0, 1),),
            bm.IndependentGaussians(np.zeros((2, 2)), np.full((2, 2), 4.0)))
        spec = ModelSpec("multinomial_logistic", ("gaussian_diag",), base,
                         FixedAlpha(1.0), num_classes=2)
        layout = design_layout(schema, spec)
        design = np.column_stack([np.ones(n), x[:, 0]])
        members = bm.Members(x, design, y.astype(np.float64))

        def run(seed, step):
            rng_c = np.random.default_rng(seed)
            kernel = MhKernel({"beta": step}, adapt=True)
            theta = MultinomialGlm(np.zeros((2, 2)))
            trace = np.empty(30_000)
            for t in range(len(trace)):
                if t == 8000:
                    kernel.freeze()
                theta = kernel.update_glm_coefficients(part_resp, members, theta,
                                                       rng_c, layout)
                # slope contrast between the two classes is identified
                trace[t] = theta.beta[1, 1] - theta.beta[1, 0]
            return trace[8000:]

        part_resp = base.response_part
        m1, se1 = mean_and_se(run(0, 0.3), 50)
        m2, se2 = mean_and_se(run(99, 0.8), 50)
        assert abs(m1 - m2) < max(0.05, 4 * math.hypot(se1, se2))


class TestRunChain:
    def test_default_protocol_records_200_samples(self, warm_kernel):
        data = toy_gaussian_dataset(n=12, seed=9)
        result = run_chain(data, conjugate_gaussian_spec(), ChainConfig(seed=5))
        assert ChainConfig().num_recorded == 200
        assert len(result.samples) == 200
        assert result.samples[0].iteration_index == 1005
        assert result.samples[-1].iteration_index == 2000

    def test_same_seed_identical_label_traces(self, warm_kernel):
        data = toy_gaussian_dataset(n=10, seed=10)
        cfg = ChainConfig(burn_in=50, thin=2, total_iterations=150, seed=7)
        a = run_chain(data, conjugate_gaussian_spec(), cfg)
        b = run_chain(data, conjugate_gaussian_spec(), cfg)
        for sa, sb in zip(a.samples, b.samples):
            np.testing.assert_array_equal(sa.labels, sb.labels)
            assert sa.alpha == sb.alpha
        np.testing.assert_array_equal(a.diagnostics["log_joint"],
                                      b.diagnostics["log_joint"])

    def test_neal8_same_seed_identical(self):
        data = toy_gaussian_dataset(n=8, seed=11)
        cfg = ChainConfig(burn_in=30, thin=2, total_iterations=90, seed=3,
                          sampler="neal8")
        a = run_chain(data, conjugate_gaussian_spec(), cfg)
        b = run_chain(data, conjugate_gaussian_spec(), cfg)
        for sa, sb in zip(a.samples, b.samples):
            np.testing.assert_array_equal(sa.labels, sb.labels)

    def test_recorded_samples_pass_invariants(self, warm_kernel):
        data = toy_gaussian_dataset(n=9, seed=12)
        cfg = ChainConfig(burn_in=20, thin=3, total_iterations=80, seed=1)
        result = run_chain(data, conjugate_gaussian_spec(), cfg)
        assert len(result.samples) == 20
        for sample in result.samples:
            counts = {}
            for lab in sample.labels:
                counts[int(lab)] = counts.get(int(lab), 0) + 1
            assert counts == {cid: e.count for cid, e in sample.clusters.items()}

    def test_diagnostics_recorded_every_iteration(self, warm_kernel):
        data = toy_gaussian_dataset(n=8, seed=13)
        cfg = ChainConfig(burn_in=10, thin=1, total_iterations=40, seed=2)
        result = run_chain(data, conjugate_gaussian_spec(), cfg)
        assert len(result.diagnostics["log_joint"]) == 40
        assert np.all(np.isfinite(result.diagnostics["log_joint"]))
        assert np.all(result.diagnostics["num_clusters"] >= 1)
