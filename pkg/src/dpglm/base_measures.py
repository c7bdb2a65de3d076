"""Base-measure menu: prior sampling, conjugate updates, collapsed densities.

Three covariate priors (per dimension) and two response priors are supported:

* ``NIG(a, b, lam, nu)`` on a continuous dimension:
  sigma2 ~ InvGamma(a, b), mu | sigma2 ~ N(lam, sigma2 / nu).  Conjugate;
  the marginal and predictive are Student-t.
* ``DirichletLevels(concentration)`` on a categorical dimension.  Conjugate;
  the predictive is the Polya urn rule.
* ``LogNormalMeanVar(m_mu, s_mu, m_sigma, s_sigma)`` on a continuous
  dimension: mu ~ N(m_mu, s_mu^2) and log(sigma2) ~ N(m_sigma, s_sigma^2).
  Not conjugate; collapsed calls raise :class:`NonConjugateBase`.
* ``MVNIG(m0, V, shape, scale)`` on a linear-Gaussian response:
  sigma2_y ~ InvGamma(shape, scale), beta | sigma2_y ~ N(m0, sigma2_y V).
  Conjugate; the response predictive is Student-t in y at any design row.
  The posterior quantities here are derived from standard multivariate
  normal / inverse-gamma conjugacy and are validated against quadrature
  oracles in the test suite.
* ``IndependentGaussians(mean, var, dispersion)`` on GLM coefficients, with
  an optional log-normal response variance.  Not conjugate as a whole;
  under the linear-Gaussian family the coefficients still admit an exact
  conditional draw given sigma2_y.

All functions are pure; random draws take an explicit generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Union

import numpy as np

from .core import (ClusterParams, GaussianDim, GaussianGlm, MultinomialGlm,
                   PoissonGlm)
from .errors import NonConjugateBase

_LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# Prior part definitions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NIG:
    """Normal-inverse-gamma prior on one continuous covariate dimension."""

    a: float
    b: float
    lam: float
    nu: float

    def __post_init__(self):
        if min(self.a, self.b, self.nu) <= 0:
            raise ValueError("NIG needs positive a, b, nu")

    is_conjugate = True


@dataclass(frozen=True)
class DirichletLevels:
    """Dirichlet prior on the level probabilities of a categorical column."""

    concentration: tuple

    def __post_init__(self):
        object.__setattr__(self, "concentration",
                           tuple(float(c) for c in self.concentration))
        if len(self.concentration) < 2 or min(self.concentration) <= 0:
            raise ValueError("Dirichlet needs >= 2 positive concentrations")

    is_conjugate = True

    @property
    def total(self) -> float:
        return float(sum(self.concentration))


@dataclass(frozen=True)
class LogNormalMeanVar:
    """Independent normal mean and log-normal variance for one dimension.

    ``sigma2 ~ exp(N(m_sigma, s_sigma^2))``, so the prior median of the
    variance is ``exp(m_sigma)``.
    """

    m_mu: float
    s_mu: float
    m_sigma: float
    s_sigma: float

    def __post_init__(self):
        if self.s_mu <= 0 or self.s_sigma <= 0:
            raise ValueError("LogNormalMeanVar needs positive scales")

    is_conjugate = False


@dataclass(frozen=True)
class MVNIG:
    """Multivariate normal-inverse-gamma prior on a linear-Gaussian response."""

    m0: np.ndarray
    V: np.ndarray
    shape: float
    scale: float

    def __post_init__(self):
        object.__setattr__(self, "m0", np.asarray(self.m0, dtype=np.float64))
        V = np.asarray(self.V, dtype=np.float64)
        object.__setattr__(self, "V", V)
        if self.shape <= 0 or self.scale <= 0:
            raise ValueError("MVNIG needs positive shape and scale")
        if V.shape != (len(self.m0), len(self.m0)) or not np.allclose(V, V.T):
            raise ValueError("V must be square and symmetric")
        np.linalg.cholesky(V)  # positive definiteness
        # derived quantities reused on every predictive evaluation
        Vinv = np.linalg.inv(V)
        object.__setattr__(self, "Vinv", 0.5 * (Vinv + Vinv.T))
        object.__setattr__(self, "Vinv_m0", self.Vinv @ self.m0)
        object.__setattr__(self, "m0Vinvm0", float(self.m0 @ self.Vinv_m0))
        object.__setattr__(self, "logdetV", float(np.linalg.slogdet(V)[1]))

    is_conjugate = True

    @property
    def p(self) -> int:
        return len(self.m0)


@dataclass(frozen=True)
class IndependentGaussians:
    """Independent normal priors on GLM coefficients.

    ``mean``/``var`` have shape (p,) for scalar-predictor families or (p, K)
    for the multinomial family.  ``dispersion=(m, s2)`` adds a log-normal
    response variance, log(sigma2_y) ~ N(m, s2); it is meaningful only for
    the linear-Gaussian family.
    """

    mean: np.ndarray
    var: np.ndarray
    dispersion: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        object.__setattr__(self, "var", np.asarray(self.var, dtype=np.float64))
        if self.mean.shape != self.var.shape:
            raise ValueError("mean and var shapes differ")
        if np.any(self.var <= 0):
            raise ValueError("coefficient prior variances must be positive")
        if self.dispersion is not None:
            m, s2 = self.dispersion
            if s2 <= 0:
                raise ValueError("dispersion needs positive variance")
            object.__setattr__(self, "dispersion", (float(m), float(s2)))

    is_conjugate = False

    @property
    def p(self) -> int:
        return self.mean.shape[0]


CovariatePart = Union[NIG, DirichletLevels, LogNormalMeanVar]
ResponsePart = Union[MVNIG, IndependentGaussians]


@dataclass(frozen=True)
class BaseMeasureSpec:
    """Per-dimension covariate priors plus one response prior."""

    covariate_parts: tuple
    response_part: ResponsePart

    @property
    def covariates_conjugate(self) -> bool:
        return all(p.is_conjugate for p in self.covariate_parts)

    @property
    def response_conjugate(self) -> bool:
        return self.response_part.is_conjugate

    @property
    def fully_conjugate(self) -> bool:
        return self.covariates_conjugate and self.response_conjugate


# ---------------------------------------------------------------------------
# Sufficient statistics
# ---------------------------------------------------------------------------


class Members(NamedTuple):
    """Data belonging to one cluster: raw covariates, design rows, responses."""

    x: np.ndarray
    design: np.ndarray
    y: np.ndarray


class SufficientStats:
    """Additive per-cluster statistics.

    Continuous dimensions keep counts/sums/sums-of-squares, categorical
    dimensions keep level counts, and a conjugate Gaussian response keeps
    the design cross-products (X'X with intercept column, X'y, y'y).
    """

    __slots__ = ("n", "cont_sum", "cont_ssq", "level_counts", "xtx", "xty", "yty")

    def __init__(self, n, cont_sum, cont_ssq, level_counts, xtx, xty, yty):
        self.n = n
        self.cont_sum = cont_sum
        self.cont_ssq = cont_ssq
        self.level_counts = level_counts
        self.xtx = xtx
        self.xty = xty
        self.yty = yty

    @staticmethod
    def empty(base: BaseMeasureSpec, p: int, track_response: bool) -> "SufficientStats":
        d = len(base.covariate_parts)
        level_counts = [np.zeros(len(part.concentration))
                        if isinstance(part, DirichletLevels) else None
                        for part in base.covariate_parts]
        if track_response:
            return SufficientStats(0, np.zeros(d), np.zeros(d), level_counts,
                                   np.zeros((p, p)), np.zeros(p), 0.0)
        return SufficientStats(0, np.zeros(d), np.zeros(d), level_counts,
                               None, None, 0.0)

    @staticmethod
    def from_members(base: BaseMeasureSpec, members: Members,
                     track_response: bool) -> "SufficientStats":
        p = members.design.shape[1] if members.design.ndim == 2 else 1
        stats = SufficientStats.empty(base, p, track_response)
        for i in range(len(members.y)):
            stats.add(members.x[i], members.design[i], members.y[i])
        return stats

    def add(self, x_row, design_row, y):
        self._update(x_row, design_row, y, +1.0)

    def remove(self, x_row, design_row, y):
        self._update(x_row, design_row, y, -1.0)

    def _update(self, x_row, design_row, y, sign):
        self.n += int(sign)
        for j, lc in enumerate(self.level_counts):
            if lc is None:
                xj = x_row[j]
                self.cont_sum[j] += sign * xj
                self.cont_ssq[j] += sign * xj * xj
            else:
                lc[int(x_row[j])] += sign
        if self.xtx is not None:
            yf = float(y)
            self.xtx += sign * np.outer(design_row, design_row)
            self.xty += sign * yf * np.asarray(design_row)
            self.yty += sign * yf * yf

    def merged(self, other: "SufficientStats") -> "SufficientStats":
        level_counts = [None if a is None else a + b
                        for a, b in zip(self.level_counts, other.level_counts)]
        if self.xtx is not None:
            return SufficientStats(self.n + other.n, self.cont_sum + other.cont_sum,
                                   self.cont_ssq + other.cont_ssq, level_counts,
                                   self.xtx + other.xtx, self.xty + other.xty,
                                   self.yty + other.yty)
        return SufficientStats(self.n + other.n, self.cont_sum + other.cont_sum,
                               self.cont_ssq + other.cont_ssq, level_counts,
                               None, None, 0.0)

    def copy(self) -> "SufficientStats":
        return SufficientStats(
            self.n, self.cont_sum.copy(), self.cont_ssq.copy(),
            [None if lc is None else lc.copy() for lc in self.level_counts],
            None if self.xtx is None else self.xtx.copy(),
            None if self.xty is None else self.xty.copy(), self.yty)


# ---------------------------------------------------------------------------
# Student-t helper
# ---------------------------------------------------------------------------


def _student_t_logpdf(x: float, df: float, loc: float, scale2: float) -> float:
    z2 = (x - loc) ** 2 / scale2
    return (math.lgamma(0.5 * (df + 1.0)) - math.lgamma(0.5 * df)
            - 0.5 * math.log(df * math.pi * scale2)
            - 0.5 * (df + 1.0) * math.log1p(z2 / df))


# ---------------------------------------------------------------------------
# NIG: posterior, marginal, predictive
# ---------------------------------------------------------------------------


def _nig_posterior(part: NIG, m: int, s1: float, s2: float):
    nun = part.nu + m
    lamn = (part.nu * part.lam + s1) / nun
    an = part.a + 0.5 * m
    bn = part.b + 0.5 * (s2 + part.nu * part.lam ** 2 - nun * lamn * lamn)
    return nun, lamn, an, max(bn, 1e-300)


def nig_log_marginal(part: NIG, m: int, s1: float, s2: float) -> float:
    if m == 0:
        return 0.0
    nun, _, an, bn = _nig_posterior(part, m, s1, s2)
    return (math.lgamma(an) - math.lgamma(part.a)
            + part.a * math.log(part.b) - an * math.log(bn)
            + 0.5 * (math.log(part.nu) - math.log(nun))
            - 0.5 * m * _LOG_2PI)


def nig_predictive_logpdf(part: NIG, m: int, s1: float, s2: float, x: float) -> float:
    nun, lamn, an, bn = _nig_posterior(part, m, s1, s2)
    scale2 = bn * (nun + 1.0) / (an * nun)
    return _student_t_logpdf(x, 2.0 * an, lamn, scale2)


def nig_predictive_params(part: NIG, m: int, s1: float, s2: float):
    """(df, loc, scale2) of the collapsed Student-t predictive."""
    nun, lamn, an, bn = _nig_posterior(part, m, s1, s2)
    return 2.0 * an, lamn, bn * (nun + 1.0) / (an * nun)


# ---------------------------------------------------------------------------
# Dirichlet: marginal and Polya predictive
# ---------------------------------------------------------------------------


def dirichlet_log_marginal(part: DirichletLevels, counts: np.ndarray) -> float:
    m = float(counts.sum())
    if m == 0:
        return 0.0
    out = math.lgamma(part.total) - math.lgamma(part.total + m)
    for ck, gk in zip(counts, part.concentration):
        out += math.lgamma(gk + float(ck)) - math.lgamma(gk)
    return out


def dirichlet_predictive_logpdf(part: DirichletLevels, counts: np.ndarray,
                                level: int) -> float:
    m = float(counts.sum())
    return math.log((part.concentration[level] + float(counts[level]))
                    / (part.total + m))


# ---------------------------------------------------------------------------
# MVNIG response: posterior, marginal, predictive
# ---------------------------------------------------------------------------


def _solve_small(Sn: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Solve Sn u = v; closed form below 3x3, LAPACK otherwise."""
    p = Sn.shape[0]
    if p == 1:
        return np.array([v[0] / Sn[0, 0]])
    if p == 2:
        det = Sn[0, 0] * Sn[1, 1] - Sn[0, 1] * Sn[1, 0]
        return np.array([(Sn[1, 1] * v[0] - Sn[0, 1] * v[1]) / det,
                         (Sn[0, 0] * v[1] - Sn[1, 0] * v[0]) / det])
    return np.linalg.solve(Sn, v)


def _logdet_small(Sn: np.ndarray) -> float:
    p = Sn.shape[0]
    if p == 1:
        return math.log(Sn[0, 0])
    if p == 2:
        return math.log(Sn[0, 0] * Sn[1, 1] - Sn[0, 1] * Sn[1, 0])
    return float(np.linalg.slogdet(Sn)[1])


def _mvnig_posterior_raw(part: MVNIG, n: int, xtx, xty, yty: float):
    Sn = part.Vinv + xtx
    tn = part.Vinv_m0 + xty
    mn = _solve_small(Sn, tn)
    an = part.shape + 0.5 * n
    bn = part.scale + 0.5 * (part.m0Vinvm0 + yty - mn @ tn)
    return Sn, mn, an, max(float(bn), 1e-300)


def _mvnig_posterior(part: MVNIG, stats: SufficientStats):
    return _mvnig_posterior_raw(part, stats.n, stats.xtx, stats.xty, stats.yty)


def mvnig_log_marginal(part: MVNIG, stats: SufficientStats) -> float:
    """Log marginal of the responses given their design rows."""
    if stats.n == 0:
        return 0.0
    Sn, mn, an, bn = _mvnig_posterior(part, stats)
    return (math.lgamma(an) - math.lgamma(part.shape)
            + part.shape * math.log(part.scale) - an * math.log(bn)
            + 0.5 * (-part.logdetV - _logdet_small(Sn))
            - 0.5 * stats.n * _LOG_2PI)


def mvnig_predictive_params(part: MVNIG, stats: SufficientStats, design_row):
    """(df, loc, scale2) of the collapsed Student-t predictive of y at a
    design row, given the cluster members summarized in ``stats``."""
    xt = np.asarray(design_row, dtype=np.float64)
    Sn, mn, an, bn = _mvnig_posterior(part, stats)
    h = float(xt @ _solve_small(Sn, xt))
    loc = float(xt @ mn)
    scale2 = (bn / an) * (1.0 + h)
    return 2.0 * an, loc, scale2


def mvnig_predictive_logpdf(part: MVNIG, stats: SufficientStats, design_row,
                            y: float) -> float:
    df, loc, scale2 = mvnig_predictive_params(part, stats, design_row)
    return _student_t_logpdf(float(y), df, loc, scale2)


def mvnig_posterior_mean_at(part: MVNIG, stats: SufficientStats, design_row) -> float:
    """Collapsed posterior-predictive mean of y at a design row."""
    _, mn, _, _ = _mvnig_posterior(part, stats)
    return float(np.asarray(design_row) @ mn)


# ---------------------------------------------------------------------------
# Public collapsed operations
# ---------------------------------------------------------------------------


def covariate_posterior_predictive_logdensity(base: BaseMeasureSpec,
                                              stats: SufficientStats,
                                              x_row) -> float:
    """Collapsed log density of one covariate row given cluster members.

    Every dimension must be conjugate (NIG or Dirichlet); an empty member
    set yields the prior predictive.  Raises :class:`NonConjugateBase` if
    any dimension carries a log-normal prior.
    """
    total = 0.0
    for j, part in enumerate(base.covariate_parts):
        total += covariate_dim_predictive_logdensity(base, stats, j, x_row[j])
    return total


def covariate_dim_predictive_logdensity(base: BaseMeasureSpec,
                                        stats: SufficientStats,
                                        j: int, xj: float) -> float:
    part = base.covariate_parts[j]
    if isinstance(part, NIG):
        return nig_predictive_logpdf(part, stats.n, stats.cont_sum[j],
                                     stats.cont_ssq[j], float(xj))
    if isinstance(part, DirichletLevels):
        return dirichlet_predictive_logpdf(part, stats.level_counts[j], int(xj))
    raise NonConjugateBase(
        f"covariate dimension {j} has a log-normal prior; use the explicit density")


def response_posterior_predictive_logdensity(base: BaseMeasureSpec,
                                             stats: SufficientStats,
                                             design_row, y: float) -> float:
    """Collapsed log density of a response at a design row given members."""
    part = base.response_part
    if not isinstance(part, MVNIG):
        raise NonConjugateBase("response prior is not multivariate NIG")
    return mvnig_predictive_logpdf(part, stats, design_row, y)


def covariate_log_marginal(base: BaseMeasureSpec, stats: SufficientStats) -> float:
    total = 0.0
    for j, part in enumerate(base.covariate_parts):
        if isinstance(part, NIG):
            total += nig_log_marginal(part, stats.n, stats.cont_sum[j],
                                      stats.cont_ssq[j])
        elif isinstance(part, DirichletLevels):
            total += dirichlet_log_marginal(part, stats.level_counts[j])
        else:
            raise NonConjugateBase(f"covariate dimension {j} is not conjugate")
    return total


def response_log_marginal(base: BaseMeasureSpec, stats: SufficientStats) -> float:
    part = base.response_part
    if not isinstance(part, MVNIG):
        raise NonConjugateBase("response prior is not multivariate NIG")
    return mvnig_log_marginal(part, stats)


def log_marginal_likelihood(base: BaseMeasureSpec, stats: SufficientStats,
                            include: str = "all") -> float:
    """Closed-form log integral of the member likelihood against the prior.

    ``include`` selects "covariates", "response", or "all" factors; the
    empty member set gives 0 (an empty product).
    """
    total = 0.0
    if include in ("all", "covariates"):
        total += covariate_log_marginal(base, stats)
    if include in ("all", "response"):
        total += response_log_marginal(base, stats)
    return total


# ---------------------------------------------------------------------------
# Explicit (non-collapsed) densities
# ---------------------------------------------------------------------------


def explicit_covariate_logdensity(theta_x, x_row, dims=None) -> float:
    """Log density of a covariate row at explicit per-dimension parameters."""
    total = 0.0
    indices = range(len(theta_x)) if dims is None else dims
    for j in indices:
        part = theta_x[j]
        if isinstance(part, GaussianDim):
            resid = float(x_row[j]) - part.mu
            total += -0.5 * (_LOG_2PI + math.log(part.sigma2)
                             + resid * resid / part.sigma2)
        else:
            total += math.log(max(float(part[int(x_row[j])]), 1e-300))
    return total


def log_prior_density(base: BaseMeasureSpec, params: ClusterParams) -> float:
    """Log G0 density of a parameter atom.

    Log-normal variance factors are measured on the log-variance scale;
    the convention is fixed, so differences across states are meaningful.
    """
    total = 0.0
    for part, theta in zip(base.covariate_parts, params.theta_x):
        if isinstance(part, NIG):
            total += _invgamma_logpdf(theta.sigma2, part.a, part.b)
            total += _normal_logpdf(theta.mu, part.lam, theta.sigma2 / part.nu)
        elif isinstance(part, DirichletLevels):
            total += _dirichlet_logpdf(np.asarray(theta), part.concentration)
        else:
            total += _normal_logpdf(theta.mu, part.m_mu, part.s_mu ** 2)
            total += _normal_logpdf(math.log(theta.sigma2), part.m_sigma,
                                    part.s_sigma ** 2)
    rp = base.response_part
    ty = params.theta_y
    if isinstance(rp, MVNIG):
        total += _invgamma_logpdf(ty.sigma2, rp.shape, rp.scale)
        p = len(rp.m0)
        resid = ty.beta - rp.m0
        ld = p * math.log(ty.sigma2) + rp.logdetV
        quad = float(resid @ rp.Vinv @ resid) / ty.sigma2
        total += -0.5 * (p * _LOG_2PI + ld + quad)
    else:
        beta = np.asarray(ty.beta, dtype=np.float64)
        total += float(np.sum(-0.5 * (_LOG_2PI + np.log(rp.var)
                                      + (beta - rp.mean) ** 2 / rp.var)))
        if rp.dispersion is not None and isinstance(ty, GaussianGlm):
            m, s2 = rp.dispersion
            total += _normal_logpdf(math.log(ty.sigma2), m, s2)
    return total


def _normal_logpdf(x, mean, var):
    return -0.5 * (_LOG_2PI + math.log(var) + (x - mean) ** 2 / var)


def _invgamma_logpdf(x, shape, scale):
    return (shape * math.log(scale) - math.lgamma(shape)
            - (shape + 1.0) * math.log(x) - scale / x)


def _dirichlet_logpdf(p, concentration):
    total = math.lgamma(sum(concentration))
    for pk, gk in zip(p, concentration):
        total += (gk - 1.0) * math.log(max(float(pk), 1e-300)) - math.lgamma(gk)
    return total


# ---------------------------------------------------------------------------
# Prior and posterior sampling
# ---------------------------------------------------------------------------


def _invgamma_draw(shape, scale, rng):
    return scale / rng.gamma(shape, 1.0)


def sample_prior(base: BaseMeasureSpec, rng: np.random.Generator,
                 family: str = "gaussian_linear") -> ClusterParams:
    """Draw one parameter atom from the base measure."""
    theta_x = []
    for part in base.covariate_parts:
        if isinstance(part, NIG):
            sigma2 = _invgamma_draw(part.a, part.b, rng)
            mu = part.lam + math.sqrt(sigma2 / part.nu) * rng.standard_normal()
            theta_x.append(GaussianDim(mu, sigma2))
        elif isinstance(part, DirichletLevels):
            theta_x.append(rng.dirichlet(part.concentration))
        else:
            mu = part.m_mu + part.s_mu * rng.standard_normal()
            sigma2 = math.exp(part.m_sigma + part.s_sigma * rng.standard_normal())
            theta_x.append(GaussianDim(mu, sigma2))
    theta_y = _sample_response_prior(base.response_part, rng, family)
    return ClusterParams(theta_x, theta_y)


def _sample_response_prior(part: ResponsePart, rng, family):
    if isinstance(part, MVNIG):
        sigma2 = _invgamma_draw(part.shape, part.scale, rng)
        L = np.linalg.cholesky(sigma2 * part.V)
        beta = part.m0 + L @ rng.standard_normal(part.p)
        return GaussianGlm(beta, sigma2)
    beta = part.mean + np.sqrt(part.var) * rng.standard_normal(part.mean.shape)
    if family == "multinomial_logistic":
        return MultinomialGlm(beta)
    if family == "poisson_log":
        return PoissonGlm(beta)
    if part.dispersion is None:
        raise ValueError("linear-Gaussian family needs a dispersion prior")
    m, s2 = part.dispersion
    sigma2 = math.exp(m + math.sqrt(s2) * rng.standard_normal())
    return GaussianGlm(beta, sigma2)


def sample_mvnig_posterior(part: MVNIG, stats: SufficientStats,
                           rng: np.random.Generator) -> GaussianGlm:
    """Exact draw of (beta, sigma2_y) given cluster members."""
    return sample_mvnig_posterior_raw(part, stats.n, stats.xtx, stats.xty,
                                      stats.yty, rng)


def sample_mvnig_posterior_raw(part: MVNIG, n: int, xtx, xty, yty: float,
                               rng: np.random.Generator) -> GaussianGlm:
    Sn, mn, an, bn = _mvnig_posterior_raw(part, n, xtx, xty, yty)
    sigma2 = _invgamma_draw(an, bn, rng)
    p = len(mn)
    if p == 1:
        beta = mn + math.sqrt(sigma2 / Sn[0, 0]) * rng.standard_normal(1)
    elif p == 2:
        # Cholesky of sigma2 * inv(Sn) in closed form
        det = Sn[0, 0] * Sn[1, 1] - Sn[0, 1] * Sn[1, 0]
        c00 = sigma2 * Sn[1, 1] / det
        c01 = -sigma2 * Sn[0, 1] / det
        c11 = sigma2 * Sn[0, 0] / det
        l00 = math.sqrt(c00)
        l10 = c01 / l00
        l11 = math.sqrt(max(c11 - l10 * l10, 1e-300))
        z0, z1 = rng.standard_normal(2)
        beta = np.array([mn[0] + l00 * z0, mn[1] + l10 * z0 + l11 * z1])
    else:
        Sninv = np.linalg.inv(Sn)
        Sninv = 0.5 * (Sninv + Sninv.T)
        L = np.linalg.cholesky(sigma2 * Sninv)
        beta = mn + L @ rng.standard_normal(p)
    return GaussianGlm(beta, float(sigma2))


def sample_nig_posterior(part: NIG, m: int, s1: float, s2: float,
                         rng: np.random.Generator) -> GaussianDim:
    nun, lamn, an, bn = _nig_posterior(part, m, s1, s2)
    sigma2 = _invgamma_draw(an, bn, rng)
    mu = lamn + math.sqrt(sigma2 / nun) * rng.standard_normal()
    return GaussianDim(float(mu), float(sigma2))


def sample_gaussian_beta_given_sigma(part: IndependentGaussians, sigma2: float,
                                     design: np.ndarray, y: np.ndarray,
                                     rng: np.random.Generator) -> np.ndarray:
    """Exact conditional draw of linear-Gaussian coefficients under
    independent normal priors (used when the variance is log-normal)."""
    prec = np.diag(1.0 / part.var) + design.T @ design / sigma2
    mean_vec = part.mean / part.var + design.T @ y / sigma2
    cov = np.linalg.inv(prec)
    cov = 0.5 * (cov + cov.T)
    mn = cov @ mean_vec
    L = np.linalg.cholesky(cov)
    return mn + L @ rng.standard_normal(len(mn))


def posterior_sample_params(base: BaseMeasureSpec, members: Members,
                            current: ClusterParams, rng: np.random.Generator,
                            layout=None, mh_kernel=None) -> ClusterParams:
    """Refresh one cluster's parameters given its members.

    Conjugate parts are drawn exactly from their posterior.  Non-conjugate
    parts (log-normal variances, multinomial/Poisson coefficients) are
    advanced by ``mh_kernel``; the default kernel is a random-walk
    Metropolis step supplied by the sampler module.
    """
    if mh_kernel is None:
        from .gibbs import default_mh_kernel
        mh_kernel = default_mh_kernel()

    theta_x = []
    for j, part in enumerate(base.covariate_parts):
        xj = members.x[:, j]
        if isinstance(part, NIG):
            theta_x.append(sample_nig_posterior(part, len(xj), float(xj.sum()),
                                                float((xj * xj).sum()), rng))
        elif isinstance(part, DirichletLevels):
            counts = np.bincount(xj.astype(int), minlength=len(part.concentration))
            theta_x.append(rng.dirichlet(np.asarray(part.concentration) + counts))
        else:
            cur = current.theta_x[j]
            sigma2 = mh_kernel.update_lognormal_dim(part, xj, cur, rng)
            # mu | sigma2 is conjugate: normal prior, normal likelihood
            prec = 1.0 / part.s_mu ** 2 + len(xj) / sigma2
            mean = (part.m_mu / part.s_mu ** 2 + float(xj.sum()) / sigma2) / prec
            mu = mean + math.sqrt(1.0 / prec) * rng.standard_normal()
            theta_x.append(GaussianDim(float(mu), float(sigma2)))

    rp = base.response_part
    if isinstance(rp, MVNIG):
        track = SufficientStats.from_members(base, members, True)
        theta_y = sample_mvnig_posterior(rp, track, rng)
    elif isinstance(current.theta_y, GaussianGlm):
        sigma2 = mh_kernel.update_lognormal_response(rp, members, current.theta_y, rng)
        beta = sample_gaussian_beta_given_sigma(rp, sigma2, members.design,
                                                members.y, rng)
        theta_y = GaussianGlm(beta, float(sigma2))
    else:
        theta_y = mh_kernel.update_glm_coefficients(rp, members, current.theta_y,
                                                    rng, layout)
    return ClusterParams(theta_x, theta_y)
