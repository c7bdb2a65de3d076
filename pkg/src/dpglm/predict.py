"""Posterior prediction: per-sample conditional means, Monte-Carlo
averaging across samples, empirical predictive bands, and classification.

Given one recorded sample, the conditional mean at a query point is a
convex combination over the sample's clusters plus a fresh-atom option:
clusters weigh member count times the covariate density at their atoms,
the fresh option weighs the concentration times the base-measure average
of the covariate density, and each option contributes its GLM mean.  The
fresh-option integrals have a closed form under a fully conjugate
linear-Gaussian base; otherwise they are estimated with a fixed number of
base-measure draws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import base_measures as bm
from .core import (DataSchema, ModelSpec, PosteriorSample, PredictiveEstimate,
                   mean_of_samples)
from .errors import DegenerateWeights
from .glm import (design_layout, design_row, glm_expectation_at_design,
                  glm_sample)


@dataclass(frozen=True)
class PriorTermEstimator:
    """How the fresh-atom integrals are computed: "analytic" (collapsed
    closed form, fully conjugate linear-Gaussian bases only) or
    "monte_carlo" with ``num_draws`` base-measure draws per evaluation."""

    mode: str = "analytic"
    num_draws: int = 50

    def __post_init__(self):
        if self.mode not in ("analytic", "monte_carlo"):
            raise ValueError(f"unknown prior-term mode {self.mode!r}")
        if self.num_draws < 1:
            raise ValueError("num_draws must be >= 1")


def default_prior_estimator(spec: ModelSpec) -> PriorTermEstimator:
    base = spec.base_measure
    if base.fully_conjugate and spec.family == "gaussian_linear":
        return PriorTermEstimator("analytic")
    return PriorTermEstimator("monte_carlo")


class _QueryContext:
    """Per-(schema, spec) derived quantities shared across query points."""

    def __init__(self, schema: DataSchema, spec: ModelSpec):
        self.spec = spec
        self.base = spec.base_measure
        self.layout = design_layout(schema, spec)
        self.empty = bm.SufficientStats.empty(self.base, self.layout.p,
                                              isinstance(self.base.response_part,
                                                         bm.MVNIG))


def _cluster_terms(sample: PosteriorSample, x_row, xt, ctx: _QueryContext):
    """(log weights, values) for the sample's clusters at the query point."""
    logw = []
    values = []
    for cid in sorted(sample.clusters):
        entry = sample.clusters[cid]
        lw = math.log(entry.count)
        lw += bm.explicit_covariate_logdensity(entry.params.theta_x, x_row)
        logw.append(lw)
        values.append(glm_expectation_at_design(entry.params.theta_y, xt,
                                                ctx.layout))
    return logw, values


def _prior_term(x_row, xt, ctx: _QueryContext, est: PriorTermEstimator, rng):
    """(log weight, value) of the fresh-atom option, weight excluding the
    concentration factor."""
    if est.mode == "analytic":
        log_i0 = bm.covariate_posterior_predictive_logdensity(ctx.base, ctx.empty,
                                                              x_row)
        value = bm.mvnig_posterior_mean_at(ctx.base.response_part, ctx.empty, xt)
        return log_i0, value
    logf = np.empty(est.num_draws)
    vals = []
    for s in range(est.num_draws):
        atom = bm.sample_prior(ctx.base, rng, ctx.spec.family)
        logf[s] = bm.explicit_covariate_logdensity(atom.theta_x, x_row)
        vals.append(glm_expectation_at_design(atom.theta_y, xt, ctx.layout))
    shift = float(np.max(logf))
    if not np.isfinite(shift):
        return -np.inf, 0.0
    w = np.exp(logf - shift)
    wsum = float(w.sum())
    value = sum(wk * vk for wk, vk in zip(w, vals)) / wsum
    log_i0 = shift + math.log(wsum / est.num_draws)
    return log_i0, value


def conditional_expectation_given_sample(sample: PosteriorSample, x_row,
                                         schema: DataSchema, spec: ModelSpec,
                                         prior_est: PriorTermEstimator = None,
                                         rng: np.random.Generator = None,
                                         ctx: _QueryContext = None):
    """Conditional mean response at ``x_row`` given one posterior sample.

    Raises :class:`DegenerateWeights` when every option's weight underflows
    to zero in log space (the query sits far outside the support of every
    cluster and of the base measure).
    """
    if prior_est is None:
        prior_est = default_prior_estimator(spec)
    if rng is None:
        rng = np.random.default_rng(0)
    if ctx is None:
        ctx = _QueryContext(schema, spec)
    x_row = np.asarray(x_row, dtype=np.float64).ravel()
    xt = design_row(x_row, ctx.layout)

    logw, values = _cluster_terms(sample, x_row, xt, ctx)
    log_p, value_p = _prior_term(x_row, xt, ctx, prior_est, rng)
    logw.append(math.log(sample.alpha) + log_p)
    values.append(value_p)

    logw = np.asarray(logw)
    shift = float(np.max(logw))
    if not np.isfinite(shift):
        raise DegenerateWeights("all mixture weights underflowed at the query")
    w = np.exp(logw - shift)
    den = float(w.sum())
    num = sum(wk * vk for wk, vk in zip(w, values))
    return num / den


def predict(samples, x_row, schema: DataSchema, spec: ModelSpec,
            prior_est: PriorTermEstimator = None, seed: int = 0) -> PredictiveEstimate:
    """Monte-Carlo posterior mean at ``x_row`` over recorded samples.

    Deterministic given the samples and ``seed`` (the seed only feeds the
    fresh-atom draws of the monte-carlo prior mode).  Degenerate samples
    are skipped; if every sample degenerates the error propagates.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("need at least one posterior sample")
    if prior_est is None:
        prior_est = default_prior_estimator(spec)
    ctx = _QueryContext(schema, spec)
    rng = np.random.default_rng(seed)
    per_sample = []
    failures = 0
    for sample in samples:
        try:
            per_sample.append(conditional_expectation_given_sample(
                sample, x_row, schema, spec, prior_est, rng, ctx))
        except DegenerateWeights:
            failures += 1
    if not per_sample:
        raise DegenerateWeights(
            f"all {failures} samples degenerate at the query point")
    arr = np.asarray(per_sample, dtype=np.float64)
    return PredictiveEstimate(mean_of_samples(arr), arr)


def predictive_band(samples, x_row, schema: DataSchema, spec: ModelSpec,
                    level: float = 0.90, draws_per_sample: int = 10,
                    seed: int = 0, prior_est: PriorTermEstimator = None):
    """Empirical central predictive interval at ``x_row``.

    For each sample, options are picked with the same weights as the
    conditional mean and a response is simulated from the picked atom's
    GLM; the fresh-atom option resamples one of the base-measure draws by
    covariate density.  Returns (lower, upper) at the requested central
    level, clamped to 0.999.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("need at least one posterior sample")
    level = min(max(level, 0.0), 0.999)
    if prior_est is None:
        prior_est = default_prior_estimator(spec)
        if prior_est.mode == "analytic":
            # band simulation always needs concrete atoms for the fresh option
            prior_est = PriorTermEstimator("monte_carlo", prior_est.num_draws)
    ctx = _QueryContext(schema, spec)
    rng = np.random.default_rng(seed)
    x_row = np.asarray(x_row, dtype=np.float64).ravel()
    xt = design_row(x_row, ctx.layout)
    draws = []
    for sample in samples:
        logw, _ = _cluster_terms(sample, x_row, xt, ctx)
        cids = sorted(sample.clusters)
        atoms = []
        logf = []
        for _ in range(prior_est.num_draws):
            atom = bm.sample_prior(ctx.base, rng, ctx.spec.family)
            atoms.append(atom)
            logf.append(bm.explicit_covariate_logdensity(atom.theta_x, x_row))
        logf = np.asarray(logf)
        fshift = float(np.max(logf))
        if np.isfinite(fshift):
            fw = np.exp(logf - fshift)
            log_prior_w = (math.log(sample.alpha) + fshift
                           + math.log(float(fw.sum()) / prior_est.num_draws))
        else:
            fw = None
            log_prior_w = -np.inf
        logw.append(log_prior_w)
        logw = np.asarray(logw)
        shift = float(np.max(logw))
        if not np.isfinite(shift):
            continue
        w = np.exp(logw - shift)
        w /= w.sum()
        for _ in range(draws_per_sample):
            pick = int(rng.choice(len(w), p=w))
            if pick < len(cids):
                theta_y = sample.clusters[cids[pick]].params.theta_y
            else:
                k = int(rng.choice(prior_est.num_draws, p=fw / fw.sum()))
                theta_y = atoms[k].theta_y
            draws.append(glm_sample(theta_y, x_row, ctx.layout, rng))
    if not draws:
        raise DegenerateWeights("no predictive draws possible at the query")
    tail = (1.0 - level) / 2.0
    lo, hi = np.quantile(np.asarray(draws, dtype=np.float64),
                         [tail, 1.0 - tail])
    return float(lo), float(hi)


def classify(samples, x_row, schema: DataSchema, spec: ModelSpec,
             prior_est: PriorTermEstimator = None, seed: int = 0):
    """Averaged class probabilities plus the argmax class (ties break to
    the lowest index)."""
    if spec.family != "multinomial_logistic":
        raise ValueError("classify needs the multinomial family")
    est = predict(samples, x_row, schema, spec, prior_est, seed)
    probs = np.asarray(est.mean, dtype=np.float64)
    return int(np.argmax(probs)), probs
