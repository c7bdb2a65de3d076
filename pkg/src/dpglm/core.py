"""Shared domain types: data schemas, model configuration, sampler state.

Everything here is value-like: plain dataclasses over numpy arrays, safe to
copy between threads.  A sampler state is only ever mutated by the single
chain that owns it.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Optional, Union

import numpy as np

from .errors import ZeroVariance

if TYPE_CHECKING:  # avoid a runtime import cycle with base_measures
    from .base_measures import BaseMeasureSpec

# ---------------------------------------------------------------------------
# Column kinds and schemas
# ---------------------------------------------------------------------------

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"
CONTINUOUS_RESPONSE = "continuous_response"
COUNT_RESPONSE = "count_response"
CATEGORICAL_RESPONSE = "categorical_response"

_RESPONSE_KINDS = (CONTINUOUS_RESPONSE, COUNT_RESPONSE, CATEGORICAL_RESPONSE)
_ALL_KINDS = (CONTINUOUS, CATEGORICAL) + _RESPONSE_KINDS


@dataclass(frozen=True)
class ColumnKind:
    """Role of one data column, plus the level count for categorical roles."""

    role: str
    levels: int = 0

    def __post_init__(self):
        if self.role not in _ALL_KINDS:
            raise ValueError(f"unknown column role {self.role!r}")
        if self.role in (CATEGORICAL, CATEGORICAL_RESPONSE) and self.levels < 2:
            raise ValueError(f"{self.role} column needs at least 2 levels")

    @property
    def is_response(self) -> bool:
        return self.role in _RESPONSE_KINDS

    @property
    def is_categorical(self) -> bool:
        return self.role == CATEGORICAL


def continuous() -> ColumnKind:
    return ColumnKind(CONTINUOUS)


def categorical(num_levels: int) -> ColumnKind:
    return ColumnKind(CATEGORICAL, num_levels)


def continuous_response() -> ColumnKind:
    return ColumnKind(CONTINUOUS_RESPONSE)


def count_response() -> ColumnKind:
    return ColumnKind(COUNT_RESPONSE)


def categorical_response(num_classes: int) -> ColumnKind:
    return ColumnKind(CATEGORICAL_RESPONSE, num_classes)


@dataclass(frozen=True)
class DataSchema:
    """Ordered named columns with exactly one response column."""

    columns: tuple  # of (name, ColumnKind)
    response_index: int

    def __post_init__(self):
        responses = [i for i, (_, k) in enumerate(self.columns) if k.is_response]
        if responses != [self.response_index]:
            raise ValueError(
                "schema must contain exactly one response column, at response_index"
            )

    @property
    def covariate_indices(self) -> tuple:
        """Schema column indices of the covariates, in order."""
        return tuple(i for i in range(len(self.columns)) if i != self.response_index)

    @property
    def covariate_kinds(self) -> tuple:
        return tuple(self.columns[i][1] for i in self.covariate_indices)

    @property
    def response_kind(self) -> ColumnKind:
        return self.columns[self.response_index][1]

    @property
    def d(self) -> int:
        """Number of covariate columns."""
        return len(self.columns) - 1


@dataclass
class Dataset:
    """Covariate table plus response vector, with optional standardization state.

    ``rows`` is an (n, d) float array over the covariate columns in schema
    order; categorical entries hold level indices 0..K-1.  ``responses`` has
    length n: real for a continuous response, a class index or a nonnegative
    count otherwise.  ``norm_stats`` maps a schema column index to the
    (mean, std) that was removed from that column; it is present only on
    standardized datasets.
    """

    schema: DataSchema
    rows: np.ndarray
    responses: np.ndarray
    norm_stats: Optional[dict] = None

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        if self.rows.ndim != 2:
            self.rows = self.rows.reshape(len(self.responses), -1)
        self.responses = np.asarray(self.responses)
        if self.schema.response_kind.role == CONTINUOUS_RESPONSE:
            self.responses = self.responses.astype(np.float64)
        else:
            self.responses = self.responses.astype(np.int64)

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def d(self) -> int:
        return self.rows.shape[1]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices)
        return Dataset(self.schema, self.rows[idx].copy(), self.responses[idx].copy(),
                       None if self.norm_stats is None else dict(self.norm_stats))


# ---------------------------------------------------------------------------
# Model configuration
# ---------------------------------------------------------------------------

GAUSSIAN_LINEAR = "gaussian_linear"
MULTINOMIAL_LOGISTIC = "multinomial_logistic"
POISSON_LOG = "poisson_log"
FAMILIES = (GAUSSIAN_LINEAR, MULTINOMIAL_LOGISTIC, POISSON_LOG)

GAUSSIAN_DIAG = "gaussian_diag"
MULTINOMIAL = "multinomial"

_FAMILY_FOR_RESPONSE = {
    CONTINUOUS_RESPONSE: GAUSSIAN_LINEAR,
    COUNT_RESPONSE: POISSON_LOG,
    CATEGORICAL_RESPONSE: MULTINOMIAL_LOGISTIC,
}


@dataclass(frozen=True)
class GammaAlphaPrior:
    """Gamma(shape, rate) prior on the concentration parameter."""

    shape: float
    rate: float

    def __post_init__(self):
        if self.shape <= 0 or self.rate <= 0:
            raise ValueError("gamma prior needs positive shape and rate")


@dataclass(frozen=True)
class FixedAlpha:
    value: float

    def __post_init__(self):
        if self.value <= 0:
            raise ValueError("concentration must be positive")


AlphaPrior = Union[GammaAlphaPrior, FixedAlpha]


@dataclass(frozen=True)
class ModelSpec:
    """Mixture-of-GLMs configuration.

    ``covariate_components`` names the per-column mixture component
    ("gaussian_diag" for continuous columns, "multinomial" for categorical
    ones).  ``glm_uses_covariates=False`` drops every covariate from the
    response model, leaving a per-cluster location/scale response; this is
    the plain joint-mixture regression used as a baseline.
    """

    family: str
    covariate_components: tuple
    base_measure: "BaseMeasureSpec"
    alpha_prior: AlphaPrior = GammaAlphaPrior(1.0, 1.0)
    num_classes: int = 0
    glm_uses_covariates: bool = True

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.family == MULTINOMIAL_LOGISTIC and self.num_classes < 2:
            raise ValueError("multinomial family needs num_classes >= 2")
        for comp in self.covariate_components:
            if comp not in (GAUSSIAN_DIAG, MULTINOMIAL):
                raise ValueError(f"unknown covariate component {comp!r}")


# ---------------------------------------------------------------------------
# Cluster parameters
# ---------------------------------------------------------------------------


@dataclass
class GaussianDim:
    """Per-dimension Gaussian covariate parameters."""

    mu: float
    sigma2: float


@dataclass
class GaussianGlm:
    """Linear-Gaussian response: coefficients over the design row plus a
    response variance."""

    beta: np.ndarray
    sigma2: float


@dataclass
class MultinomialGlm:
    """Per-class coefficients, shape (p, num_classes)."""

    beta: np.ndarray


@dataclass
class PoissonGlm:
    """Log-rate coefficients over the design row."""

    beta: np.ndarray


ResponseParams = Union[GaussianGlm, MultinomialGlm, PoissonGlm]


@dataclass
class ClusterParams:
    """One mixture atom: per-dimension covariate parameters plus the GLM
    response parameters.

    ``theta_x[j]`` is a :class:`GaussianDim` for continuous columns or a
    probability vector (ndarray) for categorical columns.
    """

    theta_x: list
    theta_y: ResponseParams

    def copy(self) -> "ClusterParams":
        tx = [GaussianDim(p.mu, p.sigma2) if isinstance(p, GaussianDim) else p.copy()
              for p in self.theta_x]
        ty = self.theta_y
        if isinstance(ty, GaussianGlm):
            ty = GaussianGlm(ty.beta.copy(), ty.sigma2)
        elif isinstance(ty, MultinomialGlm):
            ty = MultinomialGlm(ty.beta.copy())
        else:
            ty = PoissonGlm(ty.beta.copy())
        return ClusterParams(tx, ty)


def check_cluster_params(params: ClusterParams) -> list:
    """Return invariant violations (empty list when healthy)."""
    problems = []
    for j, part in enumerate(params.theta_x):
        if isinstance(part, GaussianDim):
            if not (part.sigma2 > 0):
                problems.append(f"theta_x[{j}].sigma2 not positive")
        else:
            vec = np.asarray(part)
            if abs(float(vec.sum()) - 1.0) > 1e-12:
                problems.append(f"theta_x[{j}] does not sum to 1")
            if np.any(vec < 0):
                problems.append(f"theta_x[{j}] has negative entries")
    ty = params.theta_y
    if isinstance(ty, GaussianGlm) and not (ty.sigma2 > 0):
        problems.append("theta_y.sigma2 not positive")
    return problems


# ---------------------------------------------------------------------------
# Sampler state and recorded samples
# ---------------------------------------------------------------------------


@dataclass
class ClusterEntry:
    params: ClusterParams
    count: int


@dataclass
class GibbsState:
    """Mutable chain state: labels, live clusters, and the concentration.

    Cluster ids increase monotonically over the life of a chain and are
    never reused, so traces from different runs can be compared id-by-id.
    """

    labels: np.ndarray
    clusters: dict
    alpha: float
    spec: ModelSpec
    rng: np.random.Generator
    next_cluster_id: int = 0

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def num_clusters(self) -> int:
        return len(self.clusters)


def check_state(state: GibbsState) -> list:
    """Return structural invariant violations (empty list when healthy)."""
    problems = []
    counts = {}
    for lab in state.labels:
        counts[int(lab)] = counts.get(int(lab), 0) + 1
    if set(counts) != set(state.clusters):
        problems.append("labels and live clusters disagree")
    for cid, entry in state.clusters.items():
        if entry.count != counts.get(cid, 0):
            problems.append(f"cluster {cid} member_count {entry.count} != {counts.get(cid, 0)}")
        if entry.count <= 0:
            problems.append(f"cluster {cid} is empty but live")
        if cid >= state.next_cluster_id:
            problems.append(f"cluster id {cid} not below next_cluster_id")
        problems.extend(check_cluster_params(entry.params))
    if sum(e.count for e in state.clusters.values()) != state.n:
        problems.append("member counts do not sum to n")
    return problems


@dataclass(frozen=True)
class PosteriorSample:
    """Immutable snapshot of a chain state recorded after thinning."""

    labels: np.ndarray
    clusters: dict
    alpha: float
    iteration_index: int

    @staticmethod
    def from_state(state: GibbsState, iteration_index: int) -> "PosteriorSample":
        clusters = {cid: ClusterEntry(e.params.copy(), e.count)
                    for cid, e in state.clusters.items()}
        return PosteriorSample(state.labels.copy(), clusters, state.alpha,
                               iteration_index)


@dataclass
class PredictiveEstimate:
    """Monte-Carlo posterior prediction: mean, per-sample values, and an
    optional central 90% band."""

    mean: Union[float, np.ndarray]
    per_sample_means: np.ndarray
    band_90: Optional[tuple] = None

    def __post_init__(self):
        # the stored mean must be the arithmetic average, left-to-right
        arr = np.asarray(self.per_sample_means, dtype=np.float64)
        expected = arr.sum(axis=0) / arr.shape[0]
        if not np.allclose(np.asarray(self.mean, dtype=np.float64), expected,
                           rtol=0.0, atol=1e-12):
            raise ValueError("mean is not the average of per_sample_means")


def mean_of_samples(per_sample_means: np.ndarray):
    """Average per-sample predictions in fixed (index) order."""
    arr = np.asarray(per_sample_means, dtype=np.float64)
    out = arr.sum(axis=0) / arr.shape[0]
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


@dataclass
class ValidationReport:
    violations: list

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_dataset(dataset: Dataset, spec: ModelSpec) -> ValidationReport:
    """Collect every schema/spec/data inconsistency without raising.

    Checks the family against the response kind, per-column component
    choices, value ranges (level indices, count nonnegativity, finiteness),
    and the standardization invariant when ``norm_stats`` is present.
    """
    v = []
    schema = dataset.schema
    kinds = schema.covariate_kinds

    expected_family = _FAMILY_FOR_RESPONSE[schema.response_kind.role]
    if spec.family != expected_family:
        v.append(f"family/response mismatch: {spec.family} vs {schema.response_kind.role}")
    if spec.family == MULTINOMIAL_LOGISTIC and schema.response_kind.levels and \
            spec.num_classes != schema.response_kind.levels:
        v.append("num_classes disagrees with the response column")

    if len(spec.covariate_components) != len(kinds):
        v.append("covariate_components length does not match schema")
    else:
        for j, (comp, kind) in enumerate(zip(spec.covariate_components, kinds)):
            if comp == GAUSSIAN_DIAG and kind.role != CONTINUOUS:
                v.append(f"column {j}: gaussian_diag on a non-continuous column")
            if comp == MULTINOMIAL and kind.role != CATEGORICAL:
                v.append(f"column {j}: multinomial on a non-categorical column")

    if dataset.rows.shape[1] != schema.d:
        v.append("row width does not match schema")
        return ValidationReport(v)

    for j, kind in enumerate(kinds):
        col = dataset.rows[:, j]
        name = schema.columns[schema.covariate_indices[j]][0]
        if kind.role == CONTINUOUS:
            if not np.all(np.isfinite(col)):
                v.append(f"column {name!r}: non-finite continuous value")
        else:
            if not np.all(np.isfinite(col)) or np.any(col != np.floor(col)):
                v.append(f"column {name!r}: non-integral level index")
            elif np.any(col < 0) or np.any(col >= kind.levels):
                v.append(f"column {name!r}: level index out of range 0..{kind.levels - 1}")

    resp = dataset.responses
    role = schema.response_kind.role
    if role == CONTINUOUS_RESPONSE and not np.all(np.isfinite(resp)):
        v.append("response: non-finite value")
    if role == COUNT_RESPONSE and np.any(resp < 0):
        v.append("response: negative count")
    if role == CATEGORICAL_RESPONSE and (np.any(resp < 0) or
                                         np.any(resp >= schema.response_kind.levels)):
        v.append("response: class index out of range")

    if dataset.norm_stats is not None and dataset.n >= 2:
        for col_idx in dataset.norm_stats:
            vals = _schema_column_values(dataset, col_idx)
            if abs(float(vals.mean())) > 1e-9 or abs(float(vals.std(ddof=1)) - 1.0) > 1e-9:
                name = schema.columns[col_idx][0]
                v.append(f"column {name!r}: declared standardized but is not")

    return ValidationReport(v)


def _schema_column_values(dataset: Dataset, col_idx: int) -> np.ndarray:
    if col_idx == dataset.schema.response_index:
        return np.asarray(dataset.responses, dtype=np.float64)
    j = dataset.schema.covariate_indices.index(col_idx)
    return dataset.rows[:, j]


# ---------------------------------------------------------------------------
# Standardization
# ---------------------------------------------------------------------------


def normalize(dataset: Dataset) -> Dataset:
    """Z-score every continuous column (covariates and response).

    Categorical and count columns are untouched; counts stay on their
    native scale because the Poisson family needs it.  Scaling uses the
    ddof=1 sample standard deviation.  Raises :class:`ZeroVariance` for a
    constant continuous column.
    """
    schema = dataset.schema
    rows = dataset.rows.copy()
    responses = dataset.responses.copy()
    stats = {}

    for j, kind in enumerate(schema.covariate_kinds):
        if kind.role != CONTINUOUS:
            continue
        col_idx = schema.covariate_indices[j]
        mean = float(rows[:, j].mean())
        std = float(rows[:, j].std(ddof=1)) if dataset.n > 1 else 0.0
        if std <= 0.0:
            raise ZeroVariance(schema.columns[col_idx][0])
        rows[:, j] = (rows[:, j] - mean) / std
        stats[col_idx] = (mean, std)

    if schema.response_kind.role == CONTINUOUS_RESPONSE:
        mean = float(responses.mean())
        std = float(responses.std(ddof=1)) if dataset.n > 1 else 0.0
        if std <= 0.0:
            raise ZeroVariance(schema.columns[schema.response_index][0])
        responses = (responses - mean) / std
        stats[schema.response_index] = (mean, std)

    return Dataset(schema, rows, responses, stats)


def denormalize(dataset: Dataset) -> Dataset:
    """Undo :func:`normalize`, restoring original units."""
    if dataset.norm_stats is None:
        return dataset
    schema = dataset.schema
    rows = dataset.rows.copy()
    responses = np.asarray(dataset.responses, dtype=np.float64).copy()
    for col_idx, (mean, std) in dataset.norm_stats.items():
        if col_idx == schema.response_index:
            responses = responses * std + mean
        else:
            j = schema.covariate_indices.index(col_idx)
            rows[:, j] = rows[:, j] * std + mean
    return Dataset(schema, rows, responses, None)


def normalize_query(rows: np.ndarray, schema: DataSchema, norm_stats: dict) -> np.ndarray:
    """Apply stored training standardization to fresh covariate rows."""
    out = np.array(rows, dtype=np.float64, copy=True)
    if out.ndim == 1:
        out = out.reshape(1, -1)
    for col_idx, (mean, std) in norm_stats.items():
        if col_idx == schema.response_index:
            continue
        j = schema.covariate_indices.index(col_idx)
        out[:, j] = (out[:, j] - mean) / std
    return out
