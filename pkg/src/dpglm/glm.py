"""Response-family kernel: design expansion, linear predictors, link
functions, log-likelihoods, conditional expectations, and sampling.

All three families share one design-row convention: an intercept, then each
continuous covariate as-is, then each categorical covariate as a full block
of level indicators.  Categorical covariates are stored as dense level
indices everywhere else; the expansion happens only here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (CATEGORICAL, CONTINUOUS, GAUSSIAN_LINEAR, MULTINOMIAL_LOGISTIC,
                   POISSON_LOG, DataSchema, GaussianGlm, ModelSpec, MultinomialGlm,
                   PoissonGlm)
from .errors import DimensionMismatch, OutOfSupport

# proposals can wander; exponentials are clamped so likelihoods stay finite
ETA_CLAMP = 500.0

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class DesignLayout:
    """How covariate rows map onto GLM design rows for a (schema, spec) pair."""

    family: str
    num_classes: int
    use_covariates: bool
    kinds: tuple
    p: int

    @property
    def is_gaussian(self) -> bool:
        return self.family == GAUSSIAN_LINEAR


def design_layout(schema: DataSchema, spec: ModelSpec) -> DesignLayout:
    kinds = schema.covariate_kinds
    if spec.glm_uses_covariates:
        p = 1 + sum(1 if k.role == CONTINUOUS else k.levels for k in kinds)
    else:
        p = 1
    return DesignLayout(spec.family, spec.num_classes, spec.glm_uses_covariates,
                        kinds, p)


def design_row(x_row, layout: DesignLayout) -> np.ndarray:
    """Expand one covariate row into a design row of length ``layout.p``."""
    x_row = np.asarray(x_row, dtype=np.float64).ravel()
    if x_row.shape[0] != len(layout.kinds):
        raise DimensionMismatch(
            f"expected {len(layout.kinds)} covariates, got {x_row.shape[0]}")
    out = np.zeros(layout.p)
    out[0] = 1.0
    if not layout.use_covariates:
        return out
    pos = 1
    for j, kind in enumerate(layout.kinds):
        if kind.role == CONTINUOUS:
            out[pos] = x_row[j]
            pos += 1
        else:
            out[pos + int(x_row[j])] = 1.0
            pos += kind.levels
    return out


def design_matrix(rows, layout: DesignLayout) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim == 1:
        rows = rows.reshape(1, -1)
    return np.vstack([design_row(r, layout) for r in rows])


def _beta_matrix(theta_y) -> np.ndarray:
    if isinstance(theta_y, (GaussianGlm, PoissonGlm)):
        return np.asarray(theta_y.beta, dtype=np.float64)
    return np.asarray(theta_y.beta, dtype=np.float64)


def linear_predictor(theta_y, x_row, layout: DesignLayout):
    """Intercept plus dot product over the expanded design row.

    Returns a float for scalar-predictor families, a length-K vector for
    the multinomial family.  Raises :class:`DimensionMismatch` when the
    coefficient shape disagrees with the layout.
    """
    xt = design_row(x_row, layout)
    beta = _beta_matrix(theta_y)
    if beta.shape[0] != layout.p:
        raise DimensionMismatch(f"beta rows {beta.shape[0]} != design length {layout.p}")
    eta = xt @ beta
    if isinstance(theta_y, MultinomialGlm):
        return eta
    return float(eta)


def softmax(eta: np.ndarray) -> np.ndarray:
    """Shift-invariant softmax computed with max subtraction."""
    eta = np.asarray(eta, dtype=np.float64)
    shifted = eta - eta.max()
    ex = np.exp(shifted)
    return ex / ex.sum()


def glm_expectation(theta_y, x_row, layout: DesignLayout):
    """E[Y | x, theta]: identity, exp, or softmax of the linear predictor."""
    eta = linear_predictor(theta_y, x_row, layout)
    if isinstance(theta_y, GaussianGlm):
        return eta
    if isinstance(theta_y, PoissonGlm):
        return math.exp(min(max(eta, -ETA_CLAMP), ETA_CLAMP))
    return softmax(eta)


def glm_logpdf(theta_y, x_row, y, layout: DesignLayout) -> float:
    """Exact log density/mass of the response at ``y``."""
    return glm_logpdf_at_design(theta_y, design_row(x_row, layout), y, layout)


def glm_logpdf_at_design(theta_y, xt, y, layout: DesignLayout) -> float:
    """Like :func:`glm_logpdf` but over a pre-expanded design row."""
    if isinstance(theta_y, GaussianGlm):
        eta = float(xt @ theta_y.beta)
        resid = float(y) - eta
        return -0.5 * (_LOG_2PI + math.log(theta_y.sigma2) + resid * resid / theta_y.sigma2)
    if isinstance(theta_y, PoissonGlm):
        k = int(y)
        if k < 0 or k != y:
            raise OutOfSupport(f"Poisson response must be a nonnegative integer, got {y}")
        eta = min(max(float(xt @ theta_y.beta), -ETA_CLAMP), ETA_CLAMP)
        return k * eta - math.exp(eta) - math.lgamma(k + 1.0)
    k = int(y)
    if k < 0 or k >= layout.num_classes or k != y:
        raise OutOfSupport(f"class index {y} outside 0..{layout.num_classes - 1}")
    eta = xt @ theta_y.beta
    shifted = eta - eta.max()
    return float(shifted[k] - math.log(np.exp(shifted).sum()))


def glm_expectation_at_design(theta_y, xt, layout: DesignLayout):
    """Like :func:`glm_expectation` but over a pre-expanded design row."""
    if isinstance(theta_y, GaussianGlm):
        return float(xt @ theta_y.beta)
    if isinstance(theta_y, PoissonGlm):
        eta = min(max(float(xt @ theta_y.beta), -ETA_CLAMP), ETA_CLAMP)
        return math.exp(eta)
    return softmax(xt @ theta_y.beta)


def glm_sample(theta_y, x_row, layout: DesignLayout, rng: np.random.Generator):
    """Draw one response at ``x_row``; deterministic given the generator state."""
    eta = linear_predictor(theta_y, x_row, layout)
    if isinstance(theta_y, GaussianGlm):
        return eta + math.sqrt(theta_y.sigma2) * rng.standard_normal()
    if isinstance(theta_y, PoissonGlm):
        lam = math.exp(min(max(eta, -ETA_CLAMP), ETA_CLAMP))
        return int(rng.poisson(lam))
    probs = softmax(eta)
    return int(rng.choice(layout.num_classes, p=probs))


def glm_loglik_members(theta_y, design_rows: np.ndarray, ys: np.ndarray,
                       layout: DesignLayout) -> float:
    """Summed response log-likelihood over cluster members (vectorized)."""
    m = len(ys)
    if m == 0:
        return 0.0
    if isinstance(theta_y, GaussianGlm):
        if m <= 16:
            beta = theta_y.beta
            ssr = 0.0
            for i in range(m):
                r = float(ys[i])
                row = design_rows[i]
                for j in range(len(beta)):
                    r -= row[j] * beta[j]
                ssr += r * r
        else:
            resid = ys - design_rows @ theta_y.beta
            ssr = float(resid @ resid)
        return float(-0.5 * m * (_LOG_2PI + math.log(theta_y.sigma2))
                     - 0.5 * ssr / theta_y.sigma2)
    if isinstance(theta_y, PoissonGlm):
        eta = np.clip(design_rows @ theta_y.beta, -ETA_CLAMP, ETA_CLAMP)
        return float(np.sum(ys * eta - np.exp(eta))
                     - float(np.sum([math.lgamma(int(k) + 1.0) for k in ys])))
    eta = design_rows @ theta_y.beta  # (m, K)
    shifted = eta - eta.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(len(ys))
    return float(np.sum(shifted[rows, ys.astype(int)] - logz))
