"""Comparison models: ordinary least squares, a Poisson GLM fitted by
iteratively reweighted least squares, and the location/scale joint-mixture
regression (the ablation whose response ignores the covariates).

The mixture ablation runs through the same sampler and predictor as the
full model; only the response design collapses to an intercept, so the
covariate-side code path is byte-identical between the two.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import base_measures as bm
from .core import (CATEGORICAL, CONTINUOUS, Dataset, ModelSpec,
                   PredictiveEstimate)
from .errors import SeparationDetected
from .gibbs import ChainConfig, run_chain
from .predict import predict

SEPARATION_BOUND = 30.0


# ---------------------------------------------------------------------------
# Design helper shared by OLS and the Poisson GLM
# ---------------------------------------------------------------------------


def _dummy_design(rows: np.ndarray, kinds) -> np.ndarray:
    """Intercept, raw continuous columns, and drop-first level dummies."""
    n = rows.shape[0]
    cols = [np.ones(n)]
    for j, kind in enumerate(kinds):
        if kind.role == CONTINUOUS:
            cols.append(rows[:, j])
        else:
            for level in range(1, kind.levels):
                cols.append((rows[:, j] == level).astype(np.float64))
    return np.column_stack(cols)


# ---------------------------------------------------------------------------
# Ordinary least squares
# ---------------------------------------------------------------------------


@dataclass
class OlsModel:
    beta: np.ndarray
    residual_variance: float
    kinds: tuple
    rank_deficient: bool = False


def fit_ols(data: Dataset) -> OlsModel:
    """Least squares via orthogonal decomposition; rank-deficient designs
    fall back to the minimum-norm solution and are flagged."""
    kinds = data.schema.covariate_kinds
    X = _dummy_design(data.rows, kinds)
    y = np.asarray(data.responses, dtype=np.float64)
    beta, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta
    dof = max(len(y) - rank, 1)
    return OlsModel(beta, float(resid @ resid) / dof, kinds,
                    rank_deficient=rank < X.shape[1])


def predict_ols(model: OlsModel, x_row) -> float:
    xt = _dummy_design(np.asarray(x_row, dtype=np.float64).reshape(1, -1),
                       model.kinds)[0]
    return float(xt @ model.beta)


# ---------------------------------------------------------------------------
# Poisson GLM via IRLS
# ---------------------------------------------------------------------------


@dataclass
class PoissonGlmModel:
    beta: np.ndarray
    kinds: tuple
    iterations: int
    log_likelihood: float


def _poisson_loglik(X, y, beta):
    eta = np.clip(X @ beta, -500.0, 500.0)
    return float(np.sum(y * eta - np.exp(eta)))


def fit_poisson_glm(data: Dataset, tol: float = 1e-8,
                    max_iter: int = 100) -> PoissonGlmModel:
    """Maximum likelihood by IRLS with step halving on likelihood decrease.

    Converges when the largest coefficient change drops below ``tol``;
    raises :class:`SeparationDetected` when any coefficient passes 30 in
    absolute value (the likelihood is then drifting to a boundary).
    """
    kinds = data.schema.covariate_kinds
    X = _dummy_design(data.rows, kinds)
    y = np.asarray(data.responses, dtype=np.float64)
    beta = np.zeros(X.shape[1])
    beta[0] = math.log(max(float(y.mean()), 1e-8))
    ll = _poisson_loglik(X, y, beta)
    it = 0
    for it in range(1, max_iter + 1):
        eta = np.clip(X @ beta, -500.0, 500.0)
        lam = np.exp(eta)
        z = eta + (y - lam) / lam
        w = np.sqrt(lam)
        beta_new, _, _, _ = np.linalg.lstsq(X * w[:, None], z * w, rcond=None)
        step = beta_new - beta
        # halve the step until the likelihood stops decreasing
        for _ in range(30):
            cand = beta + step
            ll_new = _poisson_loglik(X, y, cand)
            if ll_new >= ll - 1e-12:
                break
            step *= 0.5
        else:
            cand, ll_new = beta, ll
        delta = float(np.max(np.abs(cand - beta)))
        beta, ll = cand, ll_new
        if np.any(np.abs(beta) > SEPARATION_BOUND):
            raise SeparationDetected(
                f"coefficients exceeded {SEPARATION_BOUND} during IRLS")
        if delta < tol:
            break
    return PoissonGlmModel(beta, kinds, it, ll)


def predict_poisson_glm(model: PoissonGlmModel, x_row) -> float:
    xt = _dummy_design(np.asarray(x_row, dtype=np.float64).reshape(1, -1),
                       model.kinds)[0]
    return float(np.exp(np.clip(xt @ model.beta, -500.0, 500.0)))


# ---------------------------------------------------------------------------
# Location/scale mixture regression (response independent of x)
# ---------------------------------------------------------------------------


def dpmm_spec(spec: ModelSpec) -> ModelSpec:
    """Drop the covariates from the response model of a linear-Gaussian
    mixture spec, keeping the covariate side untouched."""
    if spec.family != "gaussian_linear":
        raise ValueError("the location/scale ablation needs the Gaussian family")
    rp = spec.base_measure.response_part
    if isinstance(rp, bm.MVNIG):
        reduced = bm.MVNIG(rp.m0[:1].copy(), rp.V[:1, :1].copy(), rp.shape, rp.scale)
    else:
        reduced = bm.IndependentGaussians(rp.mean[:1].copy(), rp.var[:1].copy(),
                                          rp.dispersion)
    base = bm.BaseMeasureSpec(spec.base_measure.covariate_parts, reduced)
    return replace(spec, base_measure=base, glm_uses_covariates=False)


def fit_predict_dpmm(data: Dataset, spec: ModelSpec, config: ChainConfig,
                     x_row) -> PredictiveEstimate:
    """Fit the location/scale ablation and predict at one query point."""
    result = run_chain(data, dpmm_spec(spec), config)
    return predict(result.samples, x_row, data.schema, dpmm_spec(spec),
                   seed=config.seed)
