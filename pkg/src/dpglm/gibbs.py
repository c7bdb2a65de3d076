"""Gibbs sampler for the mixture model: one full sweep resamples every
label, refreshes every cluster's parameters, and updates the concentration.

Label resampling is collapsed wherever the base measure is conjugate;
non-conjugate parts are handled with explicit parameter values and the
fresh-cluster option is represented by auxiliary atoms drawn from the base
measure, each carrying concentration/m weight.  Non-conjugate parameter
blocks move by random-walk Metropolis in unconstrained space, with step
sizes adapted toward a 0.3 acceptance rate during burn-in only.

For fully conjugate linear-Gaussian models the per-datum label loop runs
in a compiled kernel (see ``_kernel``); the surrounding orchestration,
parameter refreshes, concentration updates, and diagnostics are identical
across paths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import base_measures as bm
from .core import (ClusterEntry, ClusterParams, Dataset, GammaAlphaPrior,
                   GaussianDim, GaussianGlm, GibbsState, ModelSpec,
                   PosteriorSample, FixedAlpha, validate_dataset)
from .errors import DpglmError
from .glm import (design_layout, design_matrix, glm_logpdf_at_design,
                  glm_loglik_members)

_LOG_2PI = math.log(2.0 * math.pi)

ACCEPTANCE_TARGET = 0.3


# ---------------------------------------------------------------------------
# Chain configuration
# ---------------------------------------------------------------------------


def _default_steps() -> dict:
    return {"log_sigma_x": 1.0, "log_sigma_y": 1.0, "beta": 0.3}


@dataclass
class ChainConfig:
    """Sweep counts and sampler knobs.

    The default protocol is a 1000-iteration burn-in with a sample kept
    every 5 iterations until 2000 total iterations, so 200 samples are
    recorded.
    """

    burn_in: int = 1000
    thin: int = 5
    total_iterations: int = 2000
    neal8_aux_count: int = 3
    mh_step_sizes: dict = field(default_factory=_default_steps)
    adapt_during_burnin: bool = True
    seed: int = 0
    sampler: str = "auto"  # auto | collapsed | neal8

    def __post_init__(self):
        if self.thin < 1:
            raise ValueError("thin must be a positive integer")
        if self.burn_in < 0:
            raise ValueError("burn_in must be nonnegative")
        if self.total_iterations <= self.burn_in:
            raise ValueError("total_iterations must exceed burn_in")
        if self.neal8_aux_count < 1:
            raise ValueError("neal8_aux_count must be positive")
        if self.sampler not in ("auto", "collapsed", "neal8"):
            raise ValueError(f"unknown sampler {self.sampler!r}")

    @property
    def num_recorded(self) -> int:
        return (self.total_iterations - self.burn_in) // self.thin


# ---------------------------------------------------------------------------
# Random-walk Metropolis kernel for non-conjugate parts
# ---------------------------------------------------------------------------


class MhKernel:
    """Random-walk Metropolis moves in unconstrained space (log variances,
    raw coefficients) with Robbins-Monro step adaptation during burn-in."""

    def __init__(self, step_sizes=None, adapt=True):
        self.steps = dict(_default_steps())
        if step_sizes:
            self.steps.update(step_sizes)
        self.adapt = adapt
        self._t = {k: 0 for k in self.steps}

    def freeze(self):
        self.adapt = False

    def _tune(self, group: str, accepted: bool):
        if not self.adapt:
            return
        self._t[group] += 1
        gamma = 1.0 / self._t[group] ** 0.6
        self.steps[group] *= math.exp(gamma * ((1.0 if accepted else 0.0)
                                               - ACCEPTANCE_TARGET))

    def _mh_step(self, group, current_u, logpost, rng):
        prop = current_u + self.steps[group] * rng.standard_normal()
        logr = logpost(prop) - logpost(current_u)
        accepted = math.log(rng.random() + 1e-300) < logr
        self._tune(group, accepted)
        return prop if accepted else current_u, accepted

    # -- one-dimensional log-variance moves --------------------------------

    def update_lognormal_dim(self, part: bm.LogNormalMeanVar, xj: np.ndarray,
                             current, rng) -> float:
        """Advance sigma2 of one covariate dimension, holding mu fixed."""
        mu = current.mu
        m = len(xj)
        ssr = float(np.sum((xj - mu) ** 2))

        def logpost(u):
            return (bm._normal_logpdf(u, part.m_sigma, part.s_sigma ** 2)
                    - 0.5 * m * (_LOG_2PI + u) - 0.5 * ssr / math.exp(u))

        u, _ = self._mh_step("log_sigma_x", math.log(current.sigma2), logpost, rng)
        return math.exp(u)

    def update_lognormal_response(self, part: bm.IndependentGaussians,
                                  members: bm.Members, theta_y: GaussianGlm,
                                  rng) -> float:
        """Advance sigma2_y of a linear-Gaussian response, beta held fixed."""
        m_disp, s2_disp = part.dispersion
        resid = members.y - members.design @ theta_y.beta
        ssr = float(resid @ resid)
        m = len(members.y)

        def logpost(u):
            return (bm._normal_logpdf(u, m_disp, s2_disp)
                    - 0.5 * m * (_LOG_2PI + u) - 0.5 * ssr / math.exp(u))

        u, _ = self._mh_step("log_sigma_y", math.log(theta_y.sigma2), logpost, rng)
        return math.exp(u)

    # -- coefficient-block moves --------------------------------------------

    def update_glm_coefficients(self, part: bm.IndependentGaussians,
                                members: bm.Members, theta_y, rng, layout):
        """Random-walk move of the whole coefficient block (multinomial or
        Poisson response)."""
        beta = np.asarray(theta_y.beta, dtype=np.float64)
        prop = beta + self.steps["beta"] * rng.standard_normal(beta.shape)

        def logpost(b):
            cand = type(theta_y)(b)
            prior = float(np.sum(-0.5 * (_LOG_2PI + np.log(part.var)
                                         + (b - part.mean) ** 2 / part.var)))
            return prior + glm_loglik_members(cand, members.design, members.y,
                                              layout)

        logr = logpost(prop) - logpost(beta)
        accepted = math.log(rng.random() + 1e-300) < logr
        self._tune("beta", accepted)
        return type(theta_y)(prop if accepted else beta)

    def acceptance_snapshot(self) -> dict:
        return dict(self.steps)


def default_mh_kernel() -> MhKernel:
    return MhKernel(adapt=False)


def mh_update_nonconjugate(theta_part, members, base_part, step: float,
                           rng: np.random.Generator, layout=None):
    """One random-walk Metropolis update of a single non-conjugate block.

    ``theta_part`` is either a per-dimension covariate parameter (its log
    variance moves; pass the dimension's values as ``members``), a
    linear-Gaussian response (its log variance moves), or a coefficient
    block; the last two take :class:`base_measures.Members`.  A zero step
    leaves the chain at its current point.  The stationary distribution is
    prior times member likelihoods.
    """
    kernel = MhKernel({"log_sigma_x": step, "log_sigma_y": step, "beta": step},
                      adapt=False)
    if isinstance(base_part, bm.LogNormalMeanVar):
        xs = members.x[:, 0] if isinstance(members, bm.Members) else np.asarray(members)
        sigma2 = kernel.update_lognormal_dim(base_part, xs, theta_part, rng)
        return GaussianDim(theta_part.mu, sigma2)
    if isinstance(theta_part, GaussianGlm):
        sigma2 = kernel.update_lognormal_response(base_part, members, theta_part, rng)
        return GaussianGlm(theta_part.beta.copy(), sigma2)
    return kernel.update_glm_coefficients(base_part, members, theta_part, rng, layout)


# ---------------------------------------------------------------------------
# Concentration parameter
# ---------------------------------------------------------------------------


def escobar_west_alpha(alpha: float, num_clusters: int, n: int, shape: float,
                       rate: float, rng: np.random.Generator) -> float:
    """Two-step auxiliary-variable update of the concentration under a
    Gamma(shape, rate) prior."""
    eta = rng.beta(alpha + 1.0, n)
    rate_n = rate - math.log(eta)
    odds = (shape + num_clusters - 1.0) / (n * rate_n)
    pick_high = rng.random() < odds / (1.0 + odds)
    shape_n = shape + num_clusters if pick_high else shape + num_clusters - 1.0
    return float(rng.gamma(shape_n, 1.0 / rate_n))


def resample_alpha(state: GibbsState, prior, rng: np.random.Generator) -> float:
    """Resample the concentration; fixed priors return the fixed value."""
    if isinstance(prior, FixedAlpha):
        return prior.value
    return escobar_west_alpha(state.alpha, state.num_clusters, state.n,
                              prior.shape, prior.rate, rng)


# ---------------------------------------------------------------------------
# Workspace: per-run cached data views and per-cluster statistics
# ---------------------------------------------------------------------------


class _Workspace:
    """Derived data shared by the sweep steps of one chain."""

    def __init__(self, data: Dataset, spec: ModelSpec):
        self.data = data
        self.spec = spec
        self.base = spec.base_measure
        self.layout = design_layout(data.schema, spec)
        self.design = design_matrix(data.rows, self.layout)
        self.y = np.asarray(data.responses, dtype=np.float64)
        self.track_response = (isinstance(self.base.response_part, bm.MVNIG)
                               and spec.family == "gaussian_linear")
        self.conj_dims = tuple(j for j, p in enumerate(self.base.covariate_parts)
                               if p.is_conjugate)
        self.nonconj_dims = tuple(j for j, p in enumerate(self.base.covariate_parts)
                                  if not p.is_conjugate)
        self.response_collapsed = self.track_response

    def stats_for(self, indices) -> bm.SufficientStats:
        members = self.members_of(indices)
        return bm.SufficientStats.from_members(self.base, members,
                                               self.track_response)

    def members_of(self, indices) -> bm.Members:
        idx = np.asarray(list(indices), dtype=np.int64)
        return bm.Members(self.data.rows[idx], self.design[idx], self.y[idx])

    def empty_stats(self) -> bm.SufficientStats:
        return bm.SufficientStats.empty(self.base, self.layout.p,
                                        self.track_response)


def _label_mode(spec: ModelSpec, sampler: str) -> str:
    """Label-update mode: "collapsed" integrates every factor analytically
    (fully conjugate bases only), "mixed" collapses the conjugate factors
    and evaluates the rest at the current atoms, "explicit" evaluates
    everything at the atoms (the forced auxiliary-variable sampler)."""
    if sampler == "neal8":
        return "explicit"
    if sampler == "collapsed":
        if not spec.base_measure.fully_conjugate:
            raise DpglmError("collapsed sampler requires a fully conjugate base")
        return "collapsed"
    return "collapsed" if spec.base_measure.fully_conjugate else "mixed"


# ---------------------------------------------------------------------------
# CRP weights and assignment distribution
# ---------------------------------------------------------------------------


def crp_prior_logweights(state: GibbsState, i: int):
    """Sequential-urn prior over the label of datum i, with i held out.

    Returns ``(cluster_ids, logweights, new_logweight)``; counts are taken
    on the remaining n-1 labels, existing clusters weigh count/(n-1+alpha)
    and a fresh cluster weighs alpha/(n-1+alpha).
    """
    n = state.n
    denom = math.log(n - 1 + state.alpha)
    ids = []
    logw = []
    own = int(state.labels[i])
    for cid in sorted(state.clusters):
        count = state.clusters[cid].count - (1 if cid == own else 0)
        if count > 0:
            ids.append(cid)
            logw.append(math.log(count) - denom)
    return ids, np.array(logw), math.log(state.alpha) - denom


def assignment_logprobs(state: GibbsState, data: Dataset, i: int,
                        neal8_aux_count: int = 3, sampler: str = "auto"):
    """Normalized conditional label distribution for datum i.

    Returns ``(options, logprobs)`` where each option is an existing
    cluster id or a tuple ``("new", params)`` naming the parameter atom a
    fresh cluster would start from.  Conjugate factors use collapsed
    predictives given the other members; non-conjugate factors evaluate
    densities at the current atoms, with the fresh-cluster option expanded
    into ``neal8_aux_count`` prior draws each weighing alpha/m.
    """
    ws = _Workspace(data, state.spec)
    stats = {cid: ws.stats_for(np.flatnonzero(state.labels == cid))
             for cid in state.clusters}
    own = int(state.labels[i])
    stats[own].remove(data.rows[i], ws.design[i], ws.y[i])
    orphan = state.clusters[own].params if stats[own].n == 0 else None
    options, logw = _datum_logweights(state, ws, stats, i,
                                      _label_mode(state.spec, sampler),
                                      neal8_aux_count, state.rng, orphan=orphan)
    logw = np.array(logw)
    logw -= _logsumexp(logw)
    return options, logw


def _logsumexp(v) -> float:
    m = np.max(v)
    return float(m + np.log(np.sum(np.exp(v - m))))


def _datum_logweights(state, ws: _Workspace, stats, i, mode, aux_count, rng,
                      orphan=None):
    """Unnormalized log weights for datum i over existing clusters and the
    fresh-cluster option(s).  ``stats`` must already exclude datum i."""
    x_row = ws.data.rows[i]
    xt = ws.design[i]
    yv = ws.y[i]
    n = state.n
    denom = math.log(n - 1 + state.alpha)
    options = []
    logw = []

    collapse_dims = () if mode == "explicit" else ws.conj_dims
    explicit_dims = (tuple(range(len(ws.base.covariate_parts)))
                     if mode == "explicit" else ws.nonconj_dims)
    collapse_response = ws.response_collapsed and mode != "explicit"

    for cid in sorted(state.clusters):
        st = stats[cid]
        if st.n == 0:
            continue  # emptied by the hold-out; covered by the new option
        params = state.clusters[cid].params
        lw = math.log(st.n) - denom
        for j in collapse_dims:
            lw += bm.covariate_dim_predictive_logdensity(ws.base, st, j, x_row[j])
        if explicit_dims:
            lw += bm.explicit_covariate_logdensity(params.theta_x, x_row,
                                                   explicit_dims)
        if collapse_response:
            lw += bm.response_posterior_predictive_logdensity(ws.base, st, xt, yv)
        else:
            lw += glm_logpdf_at_design(params.theta_y, xt, yv, ws.layout)
        options.append(cid)
        logw.append(lw)

    if mode == "collapsed":
        empty = ws.empty_stats()
        lw = math.log(state.alpha) - denom
        lw += bm.covariate_posterior_predictive_logdensity(ws.base, empty, x_row)
        lw += bm.response_posterior_predictive_logdensity(ws.base, empty, xt, yv)
        options.append(("new", None))
        logw.append(lw)
    else:
        empty = ws.empty_stats()
        conj_term = 0.0
        for j in collapse_dims:
            conj_term += bm.covariate_dim_predictive_logdensity(ws.base, empty, j,
                                                                x_row[j])
        if collapse_response:
            conj_term += bm.response_posterior_predictive_logdensity(ws.base, empty,
                                                                     xt, yv)
        base_lw = math.log(state.alpha / aux_count) - denom + conj_term
        for k in range(aux_count):
            if k == 0 and orphan is not None:
                atom = orphan
            else:
                atom = bm.sample_prior(ws.base, rng, state.spec.family)
            lw = base_lw
            if explicit_dims:
                lw += bm.explicit_covariate_logdensity(atom.theta_x, x_row,
                                                       explicit_dims)
            if not collapse_response:
                lw += glm_logpdf_at_design(atom.theta_y, xt, yv, ws.layout)
            options.append(("new", atom))
            logw.append(lw)
    return options, logw


# ---------------------------------------------------------------------------
# Generic sweep
# ---------------------------------------------------------------------------


def gibbs_sweep(state: GibbsState, data: Dataset, mh: MhKernel = None,
                neal8_aux_count: int = 3, sampler: str = "auto") -> GibbsState:
    """One full sweep, in place: labels in index order (emptied clusters
    die immediately), then a parameter refresh of every surviving cluster,
    then one concentration update when a prior is configured."""
    ws = _Workspace(data, state.spec)
    mode = _label_mode(state.spec, sampler)
    if mh is None:
        mh = default_mh_kernel()
    rng = state.rng

    stats = {cid: ws.stats_for(np.flatnonzero(state.labels == cid))
             for cid in state.clusters}

    for i in range(state.n):
        own = int(state.labels[i])
        stats[own].remove(data.rows[i], ws.design[i], ws.y[i])
        state.clusters[own].count -= 1
        orphan = None
        if state.clusters[own].count == 0:
            orphan = state.clusters[own].params
            del state.clusters[own]
            del stats[own]

        options, logw = _datum_logweights(state, ws, stats, i, mode,
                                          neal8_aux_count, rng, orphan=orphan)
        logw = np.asarray(logw)
        probs = np.exp(logw - np.max(logw))
        probs /= probs.sum()
        pick = int(_categorical_draw(probs, rng))
        choice = options[pick]

        if isinstance(choice, tuple):  # fresh cluster
            cid = state.next_cluster_id
            state.next_cluster_id += 1
            atom = choice[1]
            if atom is None:
                atom = _posterior_atom_for_singleton(ws, i, rng)
            state.clusters[cid] = ClusterEntry(atom, 1)
            stats[cid] = ws.empty_stats()
            state.labels[i] = cid
        else:
            cid = choice
            state.clusters[cid].count += 1
            state.labels[i] = cid
        stats[cid].add(data.rows[i], ws.design[i], ws.y[i])

    _refresh_params(state, ws, mh, rng)
    state.alpha = resample_alpha(state, state.spec.alpha_prior, rng)
    return state


def _categorical_draw(probs: np.ndarray, rng) -> int:
    u = rng.random()
    acc = 0.0
    for k, p in enumerate(probs):
        acc += p
        if u <= acc:
            return k
    return len(probs) - 1


def _posterior_atom_for_singleton(ws: _Workspace, i: int, rng) -> ClusterParams:
    members = ws.members_of([i])
    prior_atom = bm.sample_prior(ws.base, rng, ws.spec.family)
    return bm.posterior_sample_params(ws.base, members, prior_atom, rng,
                                      layout=ws.layout,
                                      mh_kernel=default_mh_kernel())


def _refresh_params(state: GibbsState, ws: _Workspace, mh: MhKernel, rng):
    for cid in sorted(state.clusters):
        idx = np.flatnonzero(state.labels == cid)
        members = ws.members_of(idx)
        entry = state.clusters[cid]
        entry.params = bm.posterior_sample_params(ws.base, members, entry.params,
                                                  rng, layout=ws.layout,
                                                  mh_kernel=mh)


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------


def log_joint(state: GibbsState, data: Dataset, ws: _Workspace = None) -> float:
    """Log joint density of (labels, atoms, concentration, data).

    Uses the closed-form partition prior, explicit atom densities under the
    base measure, full data likelihoods, and the concentration prior when
    one is configured.  Log-normal variance factors are measured on the
    log-variance scale; the convention is fixed so traces are comparable
    across iterations.
    """
    if ws is None:
        ws = _Workspace(data, state.spec)
    n = state.n
    total = len(state.clusters) * math.log(state.alpha)
    total -= sum(math.log(state.alpha + i) for i in range(n))

    members_by = {cid: [] for cid in state.clusters}
    labels = state.labels
    for i in range(n):
        members_by[int(labels[i])].append(i)

    rows = data.rows
    small = n <= 64
    for cid, entry in state.clusters.items():
        total += math.lgamma(entry.count)
        total += bm.log_prior_density(ws.base, entry.params)
        idx = members_by[cid]
        params = entry.params
        for j, part in enumerate(params.theta_x):
            if isinstance(part, GaussianDim):
                c = -0.5 * (_LOG_2PI + math.log(part.sigma2))
                inv = 0.5 / part.sigma2
                if small:
                    for i in idx:
                        r = rows[i, j] - part.mu
                        total += c - r * r * inv
                else:
                    xj = rows[idx, j]
                    total += len(idx) * c - float(np.sum((xj - part.mu) ** 2)) * inv
            else:
                vec = np.asarray(part)
                for i in idx:
                    total += math.log(max(float(vec[int(rows[i, j])]), 1e-300))
        ia = np.asarray(idx, dtype=np.intp)
        total += glm_loglik_members(params.theta_y, ws.design[ia], ws.y[ia],
                                    ws.layout)
    prior = state.spec.alpha_prior
    if isinstance(prior, GammaAlphaPrior):
        total += (prior.shape * math.log(prior.rate) - math.lgamma(prior.shape)
                  + (prior.shape - 1.0) * math.log(state.alpha)
                  - prior.rate * state.alpha)
    return total


# ---------------------------------------------------------------------------
# Chain initialization and orchestration
# ---------------------------------------------------------------------------


def init_state(data: Dataset, spec: ModelSpec, rng: np.random.Generator) -> GibbsState:
    """Seed labels by one pass of the sequential urn (datum i joins an
    existing cluster with probability count/(i+alpha), else opens a new
    one), then draw each cluster's starting atom given its members."""
    alpha0 = (spec.alpha_prior.value if isinstance(spec.alpha_prior, FixedAlpha)
              else 1.0)
    labels = np.zeros(data.n, dtype=np.int64)
    counts = {}
    next_id = 0
    for i in range(data.n):
        ids = sorted(counts)
        weights = [counts[c] for c in ids] + [alpha0]
        w = np.asarray(weights, dtype=np.float64)
        w /= w.sum()
        pick = int(_categorical_draw(w, rng))
        if pick == len(ids):
            cid = next_id
            next_id += 1
            counts[cid] = 1
        else:
            cid = ids[pick]
            counts[cid] += 1
        labels[i] = cid

    state = GibbsState(labels, {}, alpha0, spec, rng, next_id)
    ws = _Workspace(data, spec)
    for cid in sorted(counts):
        idx = np.flatnonzero(labels == cid)
        members = ws.members_of(idx)
        prior_atom = bm.sample_prior(ws.base, rng, spec.family)
        params = bm.posterior_sample_params(ws.base, members, prior_atom, rng,
                                            layout=ws.layout,
                                            mh_kernel=default_mh_kernel())
        state.clusters[cid] = ClusterEntry(params, int(counts[cid]))
    return state


@dataclass
class ChainResult:
    """Recorded samples plus per-iteration diagnostics."""

    samples: list
    diagnostics: dict
    config: ChainConfig
    mh_steps: dict

    def __iter__(self):
        return iter(self.samples)

    def __len__(self):
        return len(self.samples)


def run_chain(data: Dataset, spec: ModelSpec, config: ChainConfig,
              sample_callback=None) -> ChainResult:
    """Run one chain and record floor((total - burn_in) / thin) samples.

    Deterministic given ``config.seed``.  The log joint density, cluster
    count, and concentration are recorded every iteration.  When
    ``sample_callback`` is given it is invoked with each recorded sample
    after storage (use it to stream long chains).
    """
    report = validate_dataset(data, spec)
    if not report.ok:
        raise DpglmError("invalid dataset/spec: " + "; ".join(report.violations))

    rng = np.random.default_rng(config.seed)
    state = init_state(data, spec, rng)
    mh = MhKernel(config.mh_step_sizes, adapt=config.adapt_during_burnin)
    ws = _Workspace(data, spec)

    mode = _label_mode(spec, config.sampler)
    fast = mode == "collapsed" and spec.family == "gaussian_linear"
    if fast:
        from ._kernel import CollapsedGaussianDriver
        driver = CollapsedGaussianDriver(state, data, ws)
    else:
        driver = None

    samples = []
    iters = np.arange(1, config.total_iterations + 1)
    logj = np.zeros(config.total_iterations)
    ks = np.zeros(config.total_iterations, dtype=np.int64)
    alphas = np.zeros(config.total_iterations)

    for t in range(1, config.total_iterations + 1):
        if t == config.burn_in + 1:
            mh.freeze()
        if driver is not None:
            driver.sweep(rng)
            state.alpha = resample_alpha(state, spec.alpha_prior, rng)
            driver.sync_state()
        else:
            gibbs_sweep(state, data, mh=mh, neal8_aux_count=config.neal8_aux_count,
                        sampler=config.sampler)
        logj[t - 1] = log_joint(state, data, ws)
        ks[t - 1] = state.num_clusters
        alphas[t - 1] = state.alpha
        if t > config.burn_in and (t - config.burn_in) % config.thin == 0:
            sample = PosteriorSample.from_state(state, t)
            samples.append(sample)
            if sample_callback is not None:
                sample_callback(sample)

    diagnostics = {"iteration": iters, "log_joint": logj, "num_clusters": ks,
                   "alpha": alphas}
    return ChainResult(samples, diagnostics, config, mh.acceptance_snapshot())
