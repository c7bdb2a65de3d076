"""Exact small-n posterior computation and quadrature validators.

Two independent routes guard the closed-form conjugate algebra:

* partition enumeration (restricted growth strings) turns the posterior
  over clusterings into an exact finite sum for n <= 10;
* numeric integration re-derives marginals and predictives without the
  posterior-update recursions (full quadrature over the parameter space
  for the one-dimensional priors; a joint-covariance Gaussian identity
  plus a one-dimensional variance quadrature for the regression prior).
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np
from scipy import integrate, stats

from . import base_measures as bm
from .core import Dataset, ModelSpec
from .errors import NonConjugateBase, TooLarge
from .glm import design_layout, design_matrix, design_row

_LOG_2PI = math.log(2.0 * math.pi)

PARTITION_CAP = 10


# ---------------------------------------------------------------------------
# Partition enumeration
# ---------------------------------------------------------------------------


def enumerate_partitions(n: int) -> list:
    """All set partitions of {0..n-1} as lists of index lists.

    Generated via restricted growth strings, so the output is canonical
    and duplicate-free; there are Bell(n) of them.  ``n`` is capped at 10.
    """
    if n > PARTITION_CAP:
        raise TooLarge(f"partition enumeration capped at n={PARTITION_CAP}")
    if n == 0:
        return [[]]
    out = []
    growth = [0] * n

    def rec(i: int, max_used: int):
        if i == n:
            blocks = [[] for _ in range(max_used + 1)]
            for idx, b in enumerate(growth):
                blocks[b].append(idx)
            out.append(blocks)
            return
        for b in range(max_used + 2):
            growth[i] = b
            rec(i + 1, max(max_used, b))

    rec(1, 0)  # first element always opens block 0
    return out


def crp_partition_logprior(blocks: list, n: int, alpha: float) -> float:
    """Closed-form partition probability alpha^K prod (n_b - 1)! / rising(alpha, n)."""
    lp = len(blocks) * math.log(alpha)
    lp += sum(math.lgamma(len(b)) for b in blocks)
    lp -= sum(math.log(alpha + i) for i in range(n))
    return lp


# ---------------------------------------------------------------------------
# Exact posterior expectation for fully conjugate models
# ---------------------------------------------------------------------------


def exact_posterior_expectation(dataset: Dataset, spec: ModelSpec, alpha: float,
                                x_row) -> float:
    """Exact posterior mean response at ``x_row`` by partition enumeration.

    Sums, over all partitions z of the data, the partition posterior
    (CRP prior times per-block collapsed marginals) times the conditional
    mean at ``x_row`` given z; the inner mean weights blocks by member
    count times the collapsed covariate predictive, plus the concentration
    times the prior predictive for the fresh-cluster option, and uses the
    collapsed per-block posterior-predictive response means.
    """
    base = spec.base_measure
    if not base.fully_conjugate:
        raise NonConjugateBase("exact enumeration needs a fully conjugate base")
    n = dataset.n
    layout = design_layout(dataset.schema, spec)
    xt = design_row(np.asarray(x_row, dtype=np.float64), layout)
    empty = bm.SufficientStats.empty(base, layout.p, True)
    log_i0 = bm.covariate_posterior_predictive_logdensity(base, empty, x_row)
    prior_mean = bm.mvnig_posterior_mean_at(base.response_part, empty, xt)
    if n == 0:
        return prior_mean

    design = design_matrix(dataset.rows, layout)
    blocks_cache = {}

    def block_stats(key):
        if key not in blocks_cache:
            idx = list(key)
            members = bm.Members(dataset.rows[idx], design[idx],
                                 np.asarray(dataset.responses, dtype=np.float64)[idx])
            blocks_cache[key] = bm.SufficientStats.from_members(base, members, True)
        return blocks_cache[key]

    log_weights = []
    values = []
    for blocks in enumerate_partitions(n):
        lw = crp_partition_logprior(blocks, n, alpha)
        num = alpha * math.exp(log_i0) * prior_mean
        den = alpha * math.exp(log_i0)
        for b in blocks:
            st = block_stats(tuple(b))
            lw += bm.log_marginal_likelihood(base, st)
            px = math.exp(bm.covariate_posterior_predictive_logdensity(base, st, x_row))
            ey = bm.mvnig_posterior_mean_at(base.response_part, st, xt)
            num += len(b) * px * ey
            den += len(b) * px
        log_weights.append(lw)
        values.append(num / den)

    log_weights = np.array(log_weights)
    w = np.exp(log_weights - log_weights.max())
    w /= w.sum()
    return float(np.dot(w, np.array(values)))


# ---------------------------------------------------------------------------
# Quadrature validators
# ---------------------------------------------------------------------------


def nig_log_marginal_quad(part: bm.NIG, m: int, s1: float, s2: float) -> float:
    """Numeric log marginal of m observations under the NIG prior.

    Nested adaptive quadrature over (log sigma2, mu); for each variance
    node the inner mu integral runs over the exact conditional Gaussian
    mass, which keeps the accuracy near machine level.
    """
    if m == 0:
        return 0.0
    _, lamn, an, bn = bm._nig_posterior(part, m, s1, s2)
    s2_typ = bn / an
    nun = part.nu + m

    def inner(u):
        sig2 = math.exp(u)
        # mu | sigma2 has a Gaussian integrand centered at the posterior mean
        center = (part.nu * part.lam + s1) / nun
        sd = math.sqrt(sig2 / nun)

        def f_mu(mu):
            loglik = -0.5 * m * (_LOG_2PI + u) \
                - 0.5 * (s2 - 2.0 * mu * s1 + m * mu * mu) / sig2
            logprior = bm._normal_logpdf(mu, part.lam, sig2 / part.nu)
            return math.exp(loglik + logprior)

        val, _ = integrate.quad(f_mu, center - 14 * sd, center + 14 * sd,
                                epsabs=0.0, epsrel=1e-12, limit=200)
        return val * math.exp(bm._invgamma_logpdf(sig2, part.a, part.b) + u)

    u_c = math.log(s2_typ)
    val, _ = integrate.quad(inner, u_c - 22.0, u_c + 22.0,
                            epsabs=0.0, epsrel=1e-12, limit=400)
    return math.log(val)


def dirichlet_log_marginal_quad(part: bm.DirichletLevels, counts) -> float:
    """Numeric log marginal of categorical counts; supports K = 2 or 3."""
    counts = np.asarray(counts, dtype=np.float64)
    g = np.asarray(part.concentration)
    K = len(g)
    lognorm = math.lgamma(g.sum()) - sum(math.lgamma(gk) for gk in g)
    if K == 2:
        def f(p1):
            return math.exp(lognorm + (g[0] + counts[0] - 1) * math.log(p1)
                            + (g[1] + counts[1] - 1) * math.log(1 - p1))
        val, _ = integrate.quad(f, 0.0, 1.0, epsabs=1e-14, epsrel=1e-12)
        return math.log(val)
    if K == 3:
        def f(p2, p1):
            p3 = 1.0 - p1 - p2
            if p3 <= 0:
                return 0.0
            return math.exp(lognorm + (g[0] + counts[0] - 1) * math.log(p1)
                            + (g[1] + counts[1] - 1) * math.log(p2)
                            + (g[2] + counts[2] - 1) * math.log(p3))
        val, _ = integrate.dblquad(f, 0.0, 1.0, 0.0, lambda p1: 1.0 - p1,
                                   epsabs=1e-13, epsrel=1e-11)
        return math.log(val)
    raise TooLarge("dirichlet quadrature supports K <= 3")


def mvnig_log_marginal_quad(part: bm.MVNIG, design: np.ndarray,
                            y: np.ndarray) -> float:
    """Numeric log marginal of responses under the regression prior.

    Uses the joint-covariance identity y | sigma2 ~ N(X m0, sigma2 (I + X V X'))
    (evaluated by scipy, not by the posterior-update recursions) and a
    one-dimensional quadrature over log sigma2.
    """
    m = len(y)
    if m == 0:
        return 0.0
    cov0 = np.eye(m) + design @ part.V @ design.T
    mean0 = design @ part.m0
    s2_typ = part.scale / part.shape

    def integrand(u):
        sig2 = math.exp(u)
        ll = stats.multivariate_normal.logpdf(y, mean=mean0, cov=sig2 * cov0)
        lp = bm._invgamma_logpdf(sig2, part.shape, part.scale)
        return math.exp(ll + lp + u)

    u_c = math.log(s2_typ)
    val, _ = integrate.quad(integrand, u_c - 25.0, u_c + 25.0,
                            epsabs=1e-14, epsrel=1e-11, limit=400)
    return math.log(val)


def mvnig_log_marginal_quad_full(part: bm.MVNIG, design: np.ndarray,
                                 y: np.ndarray) -> float:
    """Fully numeric marginal for p <= 2: quadrature over every parameter.

    Slow; exists so at least one validation route shares no Gaussian
    integral identities at all with the closed form.
    """
    m, p = design.shape
    if p > 2:
        raise TooLarge("full quadrature supported for p <= 2 only")
    Vinv = np.linalg.inv(part.V)
    sign, ldV = np.linalg.slogdet(part.V)
    s2_typ = part.scale / part.shape
    u_lo, u_hi = math.log(s2_typ) - 16.0, math.log(s2_typ) + 16.0
    scale_b = math.sqrt(float(np.max(np.diag(part.V))) * s2_typ * 10.0) + 4.0

    def logf(u, beta):
        sig2 = math.exp(u)
        resid = y - design @ beta
        ll = -0.5 * m * (_LOG_2PI + u) - 0.5 * float(resid @ resid) / sig2
        db = beta - part.m0
        lpb = -0.5 * (p * (_LOG_2PI + u) + ldV) \
            - 0.5 * float(db @ Vinv @ db) / sig2
        return ll + lpb + bm._invgamma_logpdf(sig2, part.shape, part.scale) + u

    if p == 1:
        center = float((part.m0[0] + y.mean()) / 2.0)
        span = float(np.max(np.abs(y - part.m0[0]))) + 1.0

        def inner(u):
            sd = math.sqrt(math.exp(u) * (part.V[0, 0] + 1.0))
            lo = min(center, float(y.min()), part.m0[0]) - 14.0 * sd - span
            hi = max(center, float(y.max()), part.m0[0]) + 14.0 * sd + span
            val, _ = integrate.quad(lambda b0: math.exp(logf(u, np.array([b0]))),
                                    lo, hi, epsabs=0.0, epsrel=1e-12, limit=200)
            return val

        val, _ = integrate.quad(inner, u_lo, u_hi, epsabs=0.0, epsrel=1e-11,
                                limit=300)
    else:
        def f(u, b1, b0):
            return math.exp(logf(u, np.array([b0, b1])))
        val, _ = integrate.tplquad(f, -scale_b, scale_b, -scale_b, scale_b,
                                   u_lo, u_hi, epsabs=1e-11, epsrel=1e-8)
    return math.log(val)


def quadrature_check(base: bm.BaseMeasureSpec, members: bm.Members,
                     probe_rows=None, probe_designs=None, probe_ys=None) -> float:
    """Largest |closed form - quadrature| over marginals and predictives.

    Checks every conjugate part of ``base`` against its numeric
    counterpart on the given members, plus predictive densities at the
    probe points (predictives are validated through the marginal ratio
    identity, so the quadrature route never sees the update recursions).
    """
    worst = 0.0
    d = members.x.shape[1] if members.x.ndim == 2 else 0
    stats_all = bm.SufficientStats.from_members(
        base, members, isinstance(base.response_part, bm.MVNIG))

    for j, part in enumerate(base.covariate_parts):
        xj = members.x[:, j]
        if isinstance(part, bm.NIG):
            closed = bm.nig_log_marginal(part, len(xj), float(xj.sum()),
                                         float((xj * xj).sum()))
            numeric = nig_log_marginal_quad(part, len(xj), float(xj.sum()),
                                            float((xj * xj).sum()))
            worst = max(worst, abs(closed - numeric))
            if probe_rows is not None:
                for row in probe_rows:
                    closed_p = bm.nig_predictive_logpdf(
                        part, len(xj), float(xj.sum()), float((xj * xj).sum()),
                        float(row[j]))
                    xs2 = np.append(xj, float(row[j]))
                    numeric_p = (nig_log_marginal_quad(part, len(xs2),
                                                       float(xs2.sum()),
                                                       float((xs2 * xs2).sum()))
                                 - numeric)
                    worst = max(worst, abs(closed_p - numeric_p))
        elif isinstance(part, bm.DirichletLevels):
            counts = stats_all.level_counts[j]
            closed = bm.dirichlet_log_marginal(part, counts)
            numeric = dirichlet_log_marginal_quad(part, counts)
            worst = max(worst, abs(closed - numeric))

    if isinstance(base.response_part, bm.MVNIG):
        closed = bm.mvnig_log_marginal(base.response_part, stats_all)
        numeric = mvnig_log_marginal_quad(base.response_part, members.design,
                                          members.y)
        worst = max(worst, abs(closed - numeric))
        if probe_designs is not None and probe_ys is not None:
            for xt, yv in zip(probe_designs, probe_ys):
                closed_p = bm.mvnig_predictive_logpdf(base.response_part,
                                                      stats_all, xt, float(yv))
                aug_design = np.vstack([members.design, xt])
                aug_y = np.append(members.y, float(yv))
                numeric_p = mvnig_log_marginal_quad(base.response_part,
                                                    aug_design, aug_y) - numeric
                worst = max(worst, abs(closed_p - numeric_p))
    return worst
