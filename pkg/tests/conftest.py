import numpy as np
import pytest

from dpglm import base_measures as bm
from dpglm.core import (DataSchema, Dataset, FixedAlpha, GammaAlphaPrior,
                        ModelSpec, continuous, continuous_response)


def toy_gaussian_dataset(n=6, seed=3, slope=0.5, noise=0.7):
    rng = np.random.default_rng(seed)
    x = rng.normal(0.0, 1.0, (n, 1))
    y = slope * x[:, 0] + rng.normal(0.0, noise, n)
    schema = DataSchema((("x", continuous()), ("y", continuous_response())), 1)
    return Dataset(schema, x, y)


def conjugate_gaussian_spec(alpha=1.0, d=1):
    base = bm.BaseMeasureSpec(
        tuple(bm.NIG(2.0, 1.0, 0.0, 1.0) for _ in range(d)),
        bm.MVNIG(np.zeros(d + 1), np.eye(d + 1), 2.0, 1.0))
    return ModelSpec("gaussian_linear", ("gaussian_diag",) * d, base,
                     FixedAlpha(alpha))


def lognormal_gaussian_spec(alpha_prior=None, d=1):
    """Non-conjugate variant: log-normal variances for covariates and the
    response, independent normal coefficient priors."""
    base = bm.BaseMeasureSpec(
        tuple(bm.LogNormalMeanVar(0.0, 1.0, -1.0, 1.0) for _ in range(d)),
        bm.IndependentGaussians(np.zeros(d + 1), np.ones(d + 1),
                                dispersion=(-1.0, 1.0)))
    return ModelSpec("gaussian_linear", ("gaussian_diag",) * d, base,
                     alpha_prior or GammaAlphaPrior(1.0, 1.0))


@pytest.fixture(scope="session")
def warm_kernel():
    """Compile the collapsed kernel once per session."""
    from dpglm.gibbs import ChainConfig, run_chain
    data = toy_gaussian_dataset(n=5, seed=0)
    run_chain(data, conjugate_gaussian_spec(), ChainConfig(
        burn_in=5, thin=1, total_iterations=15, seed=0))
    return True
