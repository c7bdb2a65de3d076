"""Bayesian nonparametric regression with mixtures of generalized linear
models: joint covariate-response clustering under a Dirichlet process
prior, collapsed and auxiliary-variable Gibbs inference, and Monte-Carlo
posterior prediction, plus classical baselines and benchmark tooling.
"""

from .base_measures import (BaseMeasureSpec, DirichletLevels,
                            IndependentGaussians, LogNormalMeanVar, Members,
                            MVNIG, NIG, SufficientStats, log_marginal_likelihood,
                            posterior_sample_params, sample_prior)
from .baselines import (OlsModel, dpmm_spec, fit_ols, fit_poisson_glm,
                        fit_predict_dpmm, predict_ols, predict_poisson_glm)
from .core import (ClusterParams, ColumnKind, DataSchema, Dataset, FixedAlpha,
                   GammaAlphaPrior, GaussianDim, GaussianGlm, GibbsState,
                   ModelSpec, MultinomialGlm, PoissonGlm, PosteriorSample,
                   PredictiveEstimate, categorical, categorical_response,
                   continuous, continuous_response, count_response, denormalize,
                   normalize, validate_dataset)
from .data_io import (SplitPlan, fetch_benchmarks, load_csv, load_schema,
                      make_splits, save_schema, synth_heteroscedastic,
                      synth_spurious, write_csv)
from .gibbs import (ChainConfig, ChainResult, assignment_logprobs,
                    crp_prior_logweights, gibbs_sweep, init_state,
                    mh_update_nonconjugate, resample_alpha, run_chain)
from .oracle import (crp_partition_logprior, enumerate_partitions,
                     exact_posterior_expectation, quadrature_check)
from .predict import (PriorTermEstimator, classify,
                      conditional_expectation_given_sample, predict,
                      predictive_band)

__version__ = "0.1.0"
