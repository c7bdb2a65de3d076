"""Command-line surface: fit, predict, benchmark, synthesize, plotdata.

Runs are driven by a single JSON config document (schema-validated, unknown
keys rejected).  A fitted model is stored as a versioned zip archive of
JSON metadata and CSV sample tables; every command is deterministic given
the config (seed included) and writes nothing on validation failure.
Exit codes: 0 ok, 1 config/validation error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import csv as _csv
import io
import json
import math
import os
import sys
import zipfile
from dataclasses import asdict

import numpy as np

from . import base_measures as bm
from . import data_io
from .baselines import (dpmm_spec, fit_ols, fit_poisson_glm, predict_ols,
                        predict_poisson_glm)
from .core import (CATEGORICAL, CONTINUOUS, CONTINUOUS_RESPONSE,
                   CATEGORICAL_RESPONSE, COUNT_RESPONSE, ClusterEntry,
                   ClusterParams, Dataset, FixedAlpha, GammaAlphaPrior,
                   GaussianDim, GaussianGlm, ModelSpec, MultinomialGlm,
                   PoissonGlm, PosteriorSample, normalize, normalize_query,
                   validate_dataset)
from .errors import DpglmError, EmptyInput, LengthMismatch, SchemaMismatch
from .gibbs import ChainConfig, run_chain
from .oracle import exact_posterior_expectation
from .predict import classify, predict, predictive_band

ARCHIVE_FORMAT = "dpglm-archive"
ARCHIVE_VERSION = 1

_FIXED_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def compute_metrics(predictions, truths):
    """(mean absolute error, mean squared error) of paired sequences."""
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(truths, dtype=np.float64)
    if p.shape != t.shape:
        raise LengthMismatch(f"{p.shape} vs {t.shape}")
    if p.size == 0:
        raise EmptyInput("no predictions to score")
    err = p - t
    return float(np.mean(np.abs(err))), float(np.mean(err * err))


# ---------------------------------------------------------------------------
# Config schema and model building
# ---------------------------------------------------------------------------

_CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "dataset": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "csv": {"type": "string"},
                "schema": {"type": "string"},
                "benchmark": {"type": "string", "enum": ["cmb", "ccs", "solar"]},
                "cache_dir": {"type": "string"},
                "synthetic": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "kind": {"type": "string",
                                 "enum": ["heteroscedastic", "spurious"]},
                        "n": {"type": "integer", "minimum": 1},
                        "num_spurious": {"type": "integer", "minimum": 0},
                        "seed": {"type": "integer"},
                    },
                    "required": ["kind", "n"],
                },
            },
        },
        "normalize": {"type": "boolean"},
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "covariates": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "continuous": {"type": "object"},
                        "categorical": {"type": "object"},
                    },
                },
                "response": {"type": "object"},
                "alpha_prior": {"type": "object"},
                "location_only": {"type": "boolean"},
            },
        },
        "chain": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "burn_in": {"type": "integer", "minimum": 0},
                "thin": {"type": "integer", "minimum": 1},
                "total_iterations": {"type": "integer", "minimum": 1},
                "neal8_aux_count": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer"},
                "sampler": {"type": "string",
                            "enum": ["auto", "collapsed", "neal8"]},
                "adapt_during_burnin": {"type": "boolean"},
                "mh_step_sizes": {"type": "object"},
            },
        },
        "split": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "train_sizes": {"type": "array",
                                "items": {"type": "integer", "minimum": 1}},
                "replications": {"type": "integer", "minimum": 1},
                "test_size": {"type": "integer", "minimum": 1},
                "test_fraction": {"type": "number"},
                "seed": {"type": "integer"},
            },
            "required": ["train_sizes"],
        },
        "methods": {"type": "array", "items": {"type": "string"}},
        "prediction": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "band_level": {"type": "number"},
                "draws_per_sample": {"type": "integer", "minimum": 1},
                "prior_draws": {"type": "integer", "minimum": 1},
            },
        },
        "output": {"type": "string"},
        "seed": {"type": "integer"},
    },
}


def validate_config(config: dict):
    import jsonschema
    try:
        jsonschema.validate(config, _CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        path = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise DpglmError(f"config field {path}: {exc.message}")
    if "chain" in config:
        chain = config["chain"]
        if ("total_iterations" in chain and "burn_in" in chain
                and chain["total_iterations"] <= chain["burn_in"]):
            raise DpglmError("config field chain.total_iterations: must exceed burn_in")


def load_config(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        config = json.load(fh)
    validate_config(config)
    return config


def _load_dataset(config: dict):
    ds_cfg = config.get("dataset", {})
    if "csv" in ds_cfg:
        fschema = data_io.load_schema(ds_cfg["schema"])
        return data_io.load_csv(ds_cfg["csv"], fschema), fschema
    if "benchmark" in ds_cfg:
        data = data_io.fetch_benchmarks(ds_cfg["benchmark"],
                                        ds_cfg.get("cache_dir"))
        fschema = data_io._SCHEMAS[ds_cfg["benchmark"]]()
        return data, fschema
    if "synthetic" in ds_cfg:
        syn = ds_cfg["synthetic"]
        if syn["kind"] == "heteroscedastic":
            data = data_io.synth_heteroscedastic(syn["n"], syn.get("seed", 0))
        else:
            data = data_io.synth_spurious(syn["n"], syn.get("num_spurious", 0),
                                          syn.get("seed", 0))
        return data, data_io.FileSchema(data.schema, {})
    raise DpglmError("config field dataset: needs csv, benchmark, or synthetic")


def build_model_spec(schema, model_cfg: dict) -> ModelSpec:
    """Resolve the model section against a data schema.

    Defaults: normal-inverse-gamma covariates (a=2, b=1, center 0, nu=1)
    and a unit multivariate normal-inverse-gamma response (shape 2,
    scale 1) on standardized data; flat Dirichlet(1,...,1) for categorical
    columns; Gamma(1, 1) concentration prior.
    """
    model_cfg = model_cfg or {}
    cov_cfg = model_cfg.get("covariates", {})
    cont_cfg = cov_cfg.get("continuous", {"type": "nig"})
    cat_cfg = cov_cfg.get("categorical", {"concentration": 1.0})

    kinds = schema.covariate_kinds
    parts = []
    components = []
    for kind in kinds:
        if kind.role == CONTINUOUS:
            components.append("gaussian_diag")
            if cont_cfg.get("type", "nig") == "nig":
                parts.append(bm.NIG(cont_cfg.get("a", 2.0), cont_cfg.get("b", 1.0),
                                    cont_cfg.get("lambda", 0.0),
                                    cont_cfg.get("nu", 1.0)))
            else:
                parts.append(bm.LogNormalMeanVar(
                    cont_cfg.get("m_mu", 0.0), cont_cfg.get("s_mu", 1.0),
                    cont_cfg.get("m_sigma", -1.0), cont_cfg.get("s_sigma", 1.0)))
        else:
            components.append("multinomial")
            conc = cat_cfg.get("concentration", 1.0)
            parts.append(bm.DirichletLevels((conc,) * kind.levels))

    role = schema.response_kind.role
    family = {CONTINUOUS_RESPONSE: "gaussian_linear",
              COUNT_RESPONSE: "poisson_log",
              CATEGORICAL_RESPONSE: "multinomial_logistic"}[role]
    num_classes = schema.response_kind.levels if role == CATEGORICAL_RESPONSE else 0
    location_only = bool(model_cfg.get("location_only", False))

    p = 1
    if not location_only:
        p += sum(1 if k.role == CONTINUOUS else k.levels for k in kinds)

    resp_cfg = model_cfg.get("response", {})
    rtype = resp_cfg.get("type", "mvnig" if family == "gaussian_linear"
                         else "independent_gaussians")
    if rtype == "mvnig":
        mean = float(resp_cfg.get("mean", 0.0))
        v_scale = float(resp_cfg.get("v_scale", 1.0))
        response = bm.MVNIG(np.full(p, mean), v_scale * np.eye(p),
                            resp_cfg.get("shape", 2.0), resp_cfg.get("scale", 1.0))
    else:
        mean = float(resp_cfg.get("mean", 0.0))
        var = float(resp_cfg.get("var", 1.0))
        shape = (p, num_classes) if family == "multinomial_logistic" else (p,)
        dispersion = None
        if family == "gaussian_linear":
            disp_cfg = resp_cfg.get("dispersion", {"m": -1.0, "s2": 2.0})
            dispersion = (disp_cfg.get("m", -1.0), disp_cfg.get("s2", 2.0))
        response = bm.IndependentGaussians(np.full(shape, mean),
                                           np.full(shape, var), dispersion)

    ap_cfg = model_cfg.get("alpha_prior", {"type": "gamma", "shape": 1.0,
                                           "rate": 1.0})
    if ap_cfg.get("type", "gamma") == "fixed":
        alpha_prior = FixedAlpha(ap_cfg.get("value", 1.0))
    else:
        alpha_prior = GammaAlphaPrior(ap_cfg.get("shape", 1.0),
                                      ap_cfg.get("rate", 1.0))

    return ModelSpec(family, tuple(components), bm.BaseMeasureSpec(tuple(parts),
                                                                   response),
                     alpha_prior, num_classes, not location_only)


def build_chain_config(config: dict, seed_override=None) -> ChainConfig:
    chain = dict(config.get("chain", {}))
    if seed_override is not None:
        chain["seed"] = seed_override
    elif "seed" not in chain and "seed" in config:
        chain["seed"] = config["seed"]
    return ChainConfig(**chain)


# ---------------------------------------------------------------------------
# Archive serialization
# ---------------------------------------------------------------------------


def _params_to_json(params: ClusterParams) -> dict:
    theta_x = []
    for part in params.theta_x:
        if isinstance(part, GaussianDim):
            theta_x.append({"mu": part.mu, "sigma2": part.sigma2})
        else:
            theta_x.append({"probs": [float(v) for v in np.asarray(part)]})
    ty = params.theta_y
    if isinstance(ty, GaussianGlm):
        theta_y = {"type": "gaussian", "beta": [float(v) for v in ty.beta],
                   "sigma2": ty.sigma2}
    elif isinstance(ty, MultinomialGlm):
        theta_y = {"type": "multinomial",
                   "beta": [[float(v) for v in row] for row in ty.beta]}
    else:
        theta_y = {"type": "poisson", "beta": [float(v) for v in ty.beta]}
    return {"theta_x": theta_x, "theta_y": theta_y}


def _params_from_json(payload: dict) -> ClusterParams:
    theta_x = []
    for part in payload["theta_x"]:
        if "mu" in part:
            theta_x.append(GaussianDim(part["mu"], part["sigma2"]))
        else:
            theta_x.append(np.asarray(part["probs"], dtype=np.float64))
    ty = payload["theta_y"]
    if ty["type"] == "gaussian":
        theta_y = GaussianGlm(np.asarray(ty["beta"], dtype=np.float64),
                              ty["sigma2"])
    elif ty["type"] == "multinomial":
        theta_y = MultinomialGlm(np.asarray(ty["beta"], dtype=np.float64))
    else:
        theta_y = PoissonGlm(np.asarray(ty["beta"], dtype=np.float64))
    return ClusterParams(theta_x, theta_y)


def write_archive(path, config, fschema, train_data, norm_stats, result):
    """Write the model archive: metadata, training table, normalization
    state, recorded samples, and per-iteration diagnostics.  The zip is
    byte-deterministic: fixed entry order, fixed timestamps."""
    entries = []
    meta = {"format": ARCHIVE_FORMAT, "version": ARCHIVE_VERSION,
            "n": train_data.n, "d": train_data.d,
            "num_samples": len(result.samples)}
    entries.append(("meta.json", json.dumps(meta, sort_keys=True, indent=1)))
    entries.append(("config.json", json.dumps(config, sort_keys=True, indent=1)))
    entries.append(("schema.json", json.dumps(fschema.to_json(), indent=1)))

    buf = io.StringIO()
    n = train_data.n
    writer = _csv.writer(buf, lineterminator="\n")
    writer.writerow(["sample", "iteration", "alpha"]
                    + [f"z{i}" for i in range(n)])
    for s_idx, sample in enumerate(result.samples):
        writer.writerow([s_idx, sample.iteration_index, repr(sample.alpha)]
                        + [int(z) for z in sample.labels])
    entries.append(("samples_labels.csv", buf.getvalue()))

    buf = io.StringIO()
    writer = _csv.writer(buf, lineterminator="\n")
    writer.writerow(["sample", "cluster_id", "count", "params"])
    for s_idx, sample in enumerate(result.samples):
        for cid in sorted(sample.clusters):
            entry = sample.clusters[cid]
            writer.writerow([s_idx, cid, entry.count,
                             json.dumps(_params_to_json(entry.params),
                                        sort_keys=True)])
    entries.append(("samples_clusters.csv", buf.getvalue()))

    buf = io.StringIO()
    writer = _csv.writer(buf, lineterminator="\n")
    writer.writerow(["iteration", "log_joint", "num_clusters", "alpha"])
    diag = result.diagnostics
    for k in range(len(diag["iteration"])):
        writer.writerow([int(diag["iteration"][k]), repr(float(diag["log_joint"][k])),
                         int(diag["num_clusters"][k]), repr(float(diag["alpha"][k]))])
    entries.append(("diagnostics.csv", buf.getvalue()))

    ns = {str(k): [float(v[0]), float(v[1])] for k, v in (norm_stats or {}).items()}
    entries.append(("norm_stats.json", json.dumps(ns, sort_keys=True, indent=1)))

    buf = io.StringIO()
    _write_dataset_csv(buf, train_data, fschema)
    entries.append(("train.csv", buf.getvalue()))

    with zipfile.ZipFile(path, "w", zipfile.ZIP_DEFLATED) as zf:
        for name, payload in entries:
            info = zipfile.ZipInfo(name, date_time=_FIXED_ZIP_DATE)
            info.compress_type = zipfile.ZIP_DEFLATED
            info.external_attr = 0o644 << 16
            zf.writestr(info, payload)


def _write_dataset_csv(buf, dataset: Dataset, fschema):
    import tempfile
    with tempfile.NamedTemporaryFile("r", suffix=".csv", delete=False) as tmp:
        tmp_path = tmp.name
    data_io.write_csv(dataset, tmp_path, fschema.level_labels)
    with open(tmp_path, "r", encoding="utf-8") as fh:
        buf.write(fh.read())
    os.unlink(tmp_path)


class ModelArchive:
    """Loaded view of a fitted-model archive."""

    def __init__(self, path):
        with zipfile.ZipFile(path, "r") as zf:
            meta = json.loads(zf.read("meta.json"))
            if meta.get("format") != ARCHIVE_FORMAT:
                raise DpglmError(f"{path} is not a model archive")
            self.meta = meta
            self.config = json.loads(zf.read("config.json"))
            self.fschema = data_io.FileSchema.from_json(
                json.loads(zf.read("schema.json")))
            ns = json.loads(zf.read("norm_stats.json"))
            self.norm_stats = {int(k): (v[0], v[1]) for k, v in ns.items()}
            labels_rows = list(_csv.reader(
                io.StringIO(zf.read("samples_labels.csv").decode())))
            clusters_rows = list(_csv.reader(
                io.StringIO(zf.read("samples_clusters.csv").decode())))
            self.diagnostics_csv = zf.read("diagnostics.csv").decode()
            train_csv = zf.read("train.csv").decode()

        import tempfile
        with tempfile.NamedTemporaryFile("w", suffix=".csv", delete=False,
                                         encoding="utf-8") as tmp:
            tmp.write(train_csv)
            tmp_path = tmp.name
        self.train_data = data_io.load_csv(tmp_path, self.fschema)
        os.unlink(tmp_path)

        self.spec = build_model_spec(self.fschema.schema,
                                     self.config.get("model", {}))
        by_sample = {}
        for rec in clusters_rows[1:]:
            s_idx = int(rec[0])
            by_sample.setdefault(s_idx, {})[int(rec[1])] = ClusterEntry(
                _params_from_json(json.loads(rec[3])), int(rec[2]))
        self.samples = []
        for rec in labels_rows[1:]:
            s_idx = int(rec[0])
            labels = np.asarray([int(v) for v in rec[3:]], dtype=np.int64)
            self.samples.append(PosteriorSample(
                labels, by_sample.get(s_idx, {}), float(rec[2]), int(rec[1])))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_fit(config_path, seed=None, output=None) -> str:
    config = load_config(config_path)
    data, fschema = _load_dataset(config)
    spec = build_model_spec(fschema.schema, config.get("model", {}))
    report = validate_dataset(data, spec)
    if not report.ok:
        raise DpglmError("dataset validation: " + "; ".join(report.violations))
    chain_cfg = build_chain_config(config, seed)

    do_normalize = config.get("normalize", True)
    fit_data = normalize(data) if do_normalize else data
    result = run_chain(fit_data, spec, chain_cfg)

    out = output or config.get("output", "model.dpglm.zip")
    write_archive(out, config, fschema, data, fit_data.norm_stats, result)
    return out


def _denorm_response(values, norm_stats, schema):
    if schema.response_index in (norm_stats or {}):
        mean, std = norm_stats[schema.response_index]
        return np.asarray(values) * std + mean
    return np.asarray(values)


def cmd_predict(archive_path, queries_path, output, band_level=0.90,
                draws_per_sample=10, oracle=False, seed=0) -> str:
    archive = ModelArchive(archive_path)
    schema = archive.fschema.schema
    spec = archive.spec
    cov_names = [schema.columns[i][0] for i in schema.covariate_indices]

    with open(queries_path, "r", encoding="utf-8", newline="") as fh:
        rows = list(_csv.reader(fh))
    if not rows or [h.strip() for h in rows[0]] != cov_names:
        raise SchemaMismatch(f"query header must be exactly {cov_names}")
    queries = []
    for rec in rows[1:]:
        if not rec:
            continue
        vals = []
        for j, kind in enumerate(schema.covariate_kinds):
            cell = rec[j].strip()
            if kind.is_categorical:
                labels = archive.fschema.level_labels.get(
                    schema.covariate_indices[j])
                if labels and cell in labels:
                    vals.append(float(labels.index(cell)))
                else:
                    try:
                        vals.append(float(int(cell)))
                    except ValueError:
                        raise SchemaMismatch(
                            f"query value {cell!r} invalid for {cov_names[j]}")
            else:
                vals.append(float(cell))
        queries.append(vals)

    is_class = spec.family == "multinomial_logistic"
    header = list(cov_names)
    if is_class:
        header += [f"prob_{k}" for k in range(spec.num_classes)] + ["class"]
    else:
        header += ["mean", "lo", "hi"]

    out_rows = [header]
    if queries:
        qarr = np.asarray(queries, dtype=np.float64)
        qnorm = normalize_query(qarr, schema, archive.norm_stats) \
            if archive.norm_stats else qarr
        train_norm = normalize(archive.train_data) if archive.norm_stats else \
            archive.train_data
        for q_raw, q in zip(qarr, qnorm):
            if is_class:
                cls, probs = classify(archive.samples, q, schema, spec, seed=seed)
                out_rows.append([repr(float(v)) for v in q_raw]
                                + [repr(float(p)) for p in probs] + [cls])
                continue
            if oracle:
                if archive.train_data.n > 8:
                    raise DpglmError("exact mode is limited to n <= 8")
                alpha = (spec.alpha_prior.value
                         if isinstance(spec.alpha_prior, FixedAlpha) else 1.0)
                mean_norm = exact_posterior_expectation(train_norm, spec, alpha, q)
            else:
                mean_norm = predict(archive.samples, q, schema, spec,
                                    seed=seed).mean
            lo_n, hi_n = predictive_band(archive.samples, q, schema, spec,
                                         level=band_level,
                                         draws_per_sample=draws_per_sample,
                                         seed=seed)
            mean, lo, hi = _denorm_response([mean_norm, lo_n, hi_n],
                                            archive.norm_stats, schema)
            out_rows.append([repr(float(v)) for v in q_raw]
                            + [repr(float(mean)), repr(float(lo)), repr(float(hi))])

    with open(output, "w", encoding="utf-8", newline="") as fh:
        writer = _csv.writer(fh, lineterminator="\n")
        writer.writerows(out_rows)
    return output


# -- benchmark ---------------------------------------------------------------


def _method_predictions(method, train, test, config, task_seed):
    """Mean predictions of one method on one split, on the model scale
    (standardized continuous responses, native counts)."""
    spec_cfg = config.get("model", {})
    if method == "ols":
        model = fit_ols(train)
        return np.asarray([predict_ols(model, row) for row in test.rows])
    if method == "poisson_glm":
        model = fit_poisson_glm(train)
        return np.asarray([predict_poisson_glm(model, row) for row in test.rows])
    if method in ("dpglm", "dpmm"):
        spec = build_model_spec(train.schema, spec_cfg)
        if method == "dpmm":
            spec = dpmm_spec(spec)
        chain_cfg = build_chain_config(config, task_seed)
        result = run_chain(train, spec, chain_cfg)
        preds = []
        for row in test.rows:
            est = predict(result.samples, row, train.schema, spec,
                          seed=task_seed)
            mean = est.mean
            if spec.family == "multinomial_logistic":
                mean = int(np.argmax(mean))
            preds.append(mean)
        return np.asarray(preds, dtype=np.float64)
    raise DpglmError(f"unknown method {method!r}")


def _task_seed(base_seed, method, size, rep):
    return (hash((base_seed, method, size, rep)) & 0x7FFFFFFF)


def _run_benchmark_task(args):
    (method, size, rep, train_idx, test_idx, config, data_blob) = args
    data = data_blob
    train = data.subset(train_idx)
    test = data.subset(test_idx)
    do_normalize = config.get("normalize", True)
    if do_normalize and train.schema.response_kind.role != CATEGORICAL_RESPONSE:
        train_n = normalize(train)
        test_rows = normalize_query(test.rows, train.schema, train_n.norm_stats)
        test_n = Dataset(test.schema, test_rows, test.responses)
        if train.schema.response_kind.role == CONTINUOUS_RESPONSE:
            mean, std = train_n.norm_stats[train.schema.response_index]
            test_resp = (np.asarray(test.responses, dtype=np.float64) - mean) / std
            test_n = Dataset(test.schema, test_rows, test_resp)
    else:
        train_n, test_n = train, test
    seed = _task_seed(config.get("seed", 0), method, size, rep)
    preds = _method_predictions(method, train_n, test_n, config, seed)
    truth = np.asarray(test_n.responses, dtype=np.float64)
    mae, mse = compute_metrics(preds, truth)
    return {"method": method, "train_size": size, "replication": rep,
            "mae": mae, "mse": mse}


def _external_metrics(path, splits, data, config):
    """Score user-supplied predictions keyed by (train_size, replication,
    row_index); rows are matched against our own test splits."""
    table = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = _csv.reader(fh)
        header = next(reader)
        need = ["train_size", "replication", "row_index", "prediction"]
        if [h.strip() for h in header] != need:
            raise SchemaMismatch(f"external CSV header must be {need}")
        for rec in reader:
            if not rec:
                continue
            key = (int(rec[0]), int(rec[1]))
            table.setdefault(key, {})[int(rec[2])] = float(rec[3])
    rows = []
    do_normalize = config.get("normalize", True)
    for size, rep, train_idx, test_idx in splits:
        got = table.get((size, rep))
        if got is None or any(int(i) not in got for i in test_idx):
            raise DpglmError(
                f"external predictions missing for size {size} rep {rep}")
        preds = np.asarray([got[int(i)] for i in test_idx])
        truth = np.asarray(data.responses, dtype=np.float64)[test_idx]
        if do_normalize and data.schema.response_kind.role == CONTINUOUS_RESPONSE:
            train_resp = np.asarray(data.responses, dtype=np.float64)[train_idx]
            mean = float(train_resp.mean())
            std = float(train_resp.std(ddof=1))
            preds = (preds - mean) / std
            truth = (truth - mean) / std
        mae, mse = compute_metrics(preds, truth)
        rows.append({"method": "external", "train_size": size,
                     "replication": rep, "mae": mae, "mse": mse})
    return rows


def summarize_benchmark(raw_rows):
    """Collapse per-replication rows into mean +/- std cells."""
    keys = sorted({(r["method"], r["train_size"]) for r in raw_rows})
    out = []
    for method, size in keys:
        mae = np.asarray([r["mae"] for r in raw_rows
                          if r["method"] == method and r["train_size"] == size])
        mse = np.asarray([r["mse"] for r in raw_rows
                          if r["method"] == method and r["train_size"] == size])
        out.append({"method": method, "train_size": size,
                    "mae_mean": float(mae.mean()),
                    "mae_std": float(mae.std(ddof=1)) if len(mae) > 1 else 0.0,
                    "mse_mean": float(mse.mean()),
                    "mse_std": float(mse.std(ddof=1)) if len(mse) > 1 else 0.0})
    return out


def format_benchmark_table(summary) -> str:
    """Rows are methods, column pairs are train sizes, the per-column best
    mean carries a '*' marker."""
    methods = sorted({r["method"] for r in summary})
    sizes = sorted({r["train_size"] for r in summary})
    cells = {(r["method"], r["train_size"]): r for r in summary}
    lines = []
    for metric in ("mae", "mse"):
        lines.append(metric.upper())
        header = ["method".ljust(14)] + [f"n={s}".rjust(16) for s in sizes]
        lines.append(" ".join(header))
        best = {}
        for s in sizes:
            vals = [(cells[(m, s)][f"{metric}_mean"], m) for m in methods
                    if (m, s) in cells]
            if vals:
                best[s] = min(vals)[1]
        for m in methods:
            row = [m.ljust(14)]
            for s in sizes:
                cell = cells.get((m, s))
                if cell is None:
                    row.append(" " * 16)
                    continue
                mark = "*" if best.get(s) == m else " "
                row.append(f"{cell[f'{metric}_mean']:7.3f}+-"
                           f"{cell[f'{metric}_std']:5.3f}{mark}")
            lines.append(" ".join(row))
        lines.append("")
    return "\n".join(lines)


def cmd_benchmark(config_path, seed=None, threads=1, output=None) -> str:
    config = load_config(config_path)
    if seed is not None:
        config["seed"] = seed
    data, fschema = _load_dataset(config)
    split_cfg = dict(config.get("split", {}))
    if "test_size" not in split_cfg and "test_fraction" not in split_cfg:
        split_cfg["test_fraction"] = 0.2
    plan = data_io.SplitPlan(
        train_sizes=tuple(split_cfg.get("train_sizes", (50,))),
        replications=split_cfg.get("replications", 10),
        test_size=split_cfg.get("test_size", 0),
        test_fraction=split_cfg.get("test_fraction", 0.0),
        seed=split_cfg.get("seed", config.get("seed", 0)))
    splits = data_io.make_splits(data, plan)

    methods = config.get("methods", ["dpglm", "ols"])
    out_dir = output or config.get("output", "benchmark_out")
    os.makedirs(out_dir, exist_ok=True)

    tasks = []
    for method in methods:
        if method.startswith("external:"):
            continue
        for size, rep, train_idx, test_idx in splits:
            tasks.append((method, size, rep, train_idx, test_idx, config, data))

    if threads > 1:
        import concurrent.futures as conc
        with conc.ProcessPoolExecutor(max_workers=threads) as pool:
            raw = list(pool.map(_run_benchmark_task, tasks))
    else:
        raw = [_run_benchmark_task(t) for t in tasks]

    for method in methods:
        if method.startswith("external:"):
            raw.extend(_external_metrics(method.split(":", 1)[1], splits, data,
                                         config))

    raw.sort(key=lambda r: (r["method"], r["train_size"], r["replication"]))
    raw_path = os.path.join(out_dir, "raw.csv")
    with open(raw_path, "w", encoding="utf-8", newline="") as fh:
        writer = _csv.writer(fh, lineterminator="\n")
        writer.writerow(["method", "train_size", "replication", "mae", "mse"])
        for r in raw:
            writer.writerow([r["method"], r["train_size"], r["replication"],
                             repr(r["mae"]), repr(r["mse"])])

    summary = summarize_benchmark(raw)
    sum_path = os.path.join(out_dir, "summary.csv")
    with open(sum_path, "w", encoding="utf-8", newline="") as fh:
        writer = _csv.writer(fh, lineterminator="\n")
        writer.writerow(["method", "train_size", "mae_mean", "mae_std",
                         "mse_mean", "mse_std"])
        for r in summary:
            writer.writerow([r["method"], r["train_size"], repr(r["mae_mean"]),
                             repr(r["mae_std"]), repr(r["mse_mean"]),
                             repr(r["mse_std"])])

    table = format_benchmark_table(summary)
    with open(os.path.join(out_dir, "table.txt"), "w", encoding="utf-8") as fh:
        fh.write(table)
    print(table)
    return out_dir


def cmd_synthesize(kind, n, seed, output, schema_output, num_spurious=0) -> str:
    if kind == "heteroscedastic":
        data = data_io.synth_heteroscedastic(n, seed)
    else:
        data = data_io.synth_spurious(n, num_spurious, seed)
    fschema = data_io.FileSchema(data.schema, {})
    data_io.write_csv(data, output)
    if schema_output:
        data_io.save_schema(fschema, schema_output)
    return output


def cmd_plotdata(archive_path=None, benchmark_summary=None, output="plot.csv",
                 grid: int = 100, lo=None, hi=None, seed=0) -> str:
    """Emit plot-ready series: mean-and-band curves over a covariate grid
    from an archive, or error-versus-size series from a benchmark summary."""
    rows = []
    if benchmark_summary:
        with open(benchmark_summary, "r", encoding="utf-8", newline="") as fh:
            reader = _csv.reader(fh)
            header = next(reader)
            rows.append(["train_size", "method", "mae_mean", "mae_std",
                         "mse_mean", "mse_std"])
            recs = [rec for rec in reader if rec]
        recs.sort(key=lambda r: (int(r[1]), r[0]))
        for rec in recs:
            rows.append([rec[1], rec[0], rec[2], rec[3], rec[4], rec[5]])
    else:
        archive = ModelArchive(archive_path)
        schema = archive.fschema.schema
        if schema.d != 1 or schema.covariate_kinds[0].role != CONTINUOUS:
            raise DpglmError("grid plots need exactly one continuous covariate")
        spec = archive.spec
        xs = archive.train_data.rows[:, 0]
        g_lo = float(xs.min()) if lo is None else float(lo)
        g_hi = float(xs.max()) if hi is None else float(hi)
        grid_x = np.linspace(g_lo, g_hi, grid)
        rows.append(["x", "mean", "lo", "hi"])
        for xv in grid_x:
            q = np.asarray([xv])
            qn = normalize_query(q.reshape(1, -1), schema, archive.norm_stats)[0] \
                if archive.norm_stats else q
            mean_n = predict(archive.samples, qn, schema, spec, seed=seed).mean
            lo_n, hi_n = predictive_band(archive.samples, qn, schema, spec,
                                         seed=seed)
            mean, lo_v, hi_v = _denorm_response([mean_n, lo_n, hi_n],
                                                archive.norm_stats, schema)
            rows.append([repr(float(xv)), repr(float(mean)), repr(float(lo_v)),
                         repr(float(hi_v))])
    with open(output, "w", encoding="utf-8", newline="") as fh:
        writer = _csv.writer(fh, lineterminator="\n")
        writer.writerows(rows)
    return output


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dpglm",
        description="Mixture-of-GLMs regression: fit, predict, benchmark")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit a model from a JSON config")
    p_fit.add_argument("--config", required=True)
    p_fit.add_argument("--seed", type=int, default=None)
    p_fit.add_argument("--output", default=None)

    p_pred = sub.add_parser("predict", help="predict from a model archive")
    p_pred.add_argument("--archive", required=True)
    p_pred.add_argument("--queries", required=True)
    p_pred.add_argument("--output", required=True)
    p_pred.add_argument("--band-level", type=float, default=0.90)
    p_pred.add_argument("--draws-per-sample", type=int, default=10)
    p_pred.add_argument("--seed", type=int, default=0)
    p_pred.add_argument("--oracle", action="store_true",
                        help="exact enumeration mean (n <= 8, conjugate)")

    p_bench = sub.add_parser("benchmark", help="error tables across methods")
    p_bench.add_argument("--config", required=True)
    p_bench.add_argument("--seed", type=int, default=None)
    p_bench.add_argument("--threads", type=int, default=1)
    p_bench.add_argument("--output", default=None)

    p_syn = sub.add_parser("synthesize", help="write a synthetic dataset")
    p_syn.add_argument("--kind", required=True,
                       choices=["heteroscedastic", "spurious"])
    p_syn.add_argument("--n", type=int, required=True)
    p_syn.add_argument("--num-spurious", type=int, default=0)
    p_syn.add_argument("--seed", type=int, default=0)
    p_syn.add_argument("--output", required=True)
    p_syn.add_argument("--schema-output", default=None)

    p_plot = sub.add_parser("plotdata", help="emit plot-ready CSV series")
    p_plot.add_argument("--archive", default=None)
    p_plot.add_argument("--benchmark-summary", default=None)
    p_plot.add_argument("--output", required=True)
    p_plot.add_argument("--grid", type=int, default=100)
    p_plot.add_argument("--lo", type=float, default=None)
    p_plot.add_argument("--hi", type=float, default=None)
    p_plot.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "fit":
            cmd_fit(args.config, args.seed, args.output)
        elif args.command == "predict":
            cmd_predict(args.archive, args.queries, args.output,
                        args.band_level, args.draws_per_sample, args.oracle,
                        args.seed)
        elif args.command == "benchmark":
            cmd_benchmark(args.config, args.seed, args.threads, args.output)
        elif args.command == "synthesize":
            cmd_synthesize(args.kind, args.n, args.seed, args.output,
                           args.schema_output, args.num_spurious)
        elif args.command == "plotdata":
            cmd_plotdata(args.archive, args.benchmark_summary, args.output,
                         args.grid, args.lo, args.hi, args.seed)
    except (DpglmError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failures
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
