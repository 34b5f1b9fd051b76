"""Cross-validated accuracy/fairness sweeps over the number of decomposition steps.

A run loads a dataset once, splits it into folds, and per fold builds the
training kernel, walks the m sweep with shared iteration prefixes, fits the
regressor on every decorrelated kernel and scores one prediction vector with
all measures. Results aggregate to mean and sample standard deviation per m.
"""

from __future__ import annotations

import csv
import io
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .dataset import (
    DatasetSpec,
    Standardization,
    TabularDataset,
    kfold,
    load_csv,
    synthetic_dataset,
)
from .decomposition import (
    DEFAULT_ALPHA_TILDE_KRR,
    DEFAULT_ALPHA_TILDE_SVR,
    apply_transform,
    decompose_path,
)
from .exceptions import ConfigError, ExperimentError, FairKernelError
from .kernels import rbf_cross_kernel, rbf_kernel
from .metrics import KdeParams, gdp, hgr_estimate, mae, pairwise_fairness
from .nystroem import NystroemParams
from .regressors import KRR_ALPHA, SVR_DEFAULTS, dummy_fit, krr_fit, svr_fit

MODEL_TYPES = ("krr", "svr", "dummy")
PHASES = ("kernel", "decompose", "fit", "predict", "metrics")


def derive_seed(seed: int, *keys: int) -> int:
    """Counter-based child seed; independent of scheduling order."""
    return int(np.random.SeedSequence([int(seed), *map(int, keys)]).generate_state(1)[0])


def _require(d: dict, allowed: set, where: str):
    extra = set(d) - allowed
    if extra:
        raise ConfigError(f"unknown keys in {where}: {sorted(extra)}")


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSpec | None = None
    synthetic: dict | None = None          # keyword arguments of synthetic_dataset
    model: dict = field(default_factory=lambda: {"type": "svr"})
    gamma: float = SVR_DEFAULTS["crimes"]["gamma"]
    alpha_tilde: float | None = None       # None picks the per-model default
    m_values: tuple = (0,)
    inverse_mode: str = "exact"
    landmark_fraction: float | None = None
    lazy: bool = False
    on_exhausted: str = "saturate"         # or "error"
    k: int = 5
    seed: int = 0
    kde: KdeParams = KdeParams()
    output_path: str | None = None         # CLI default when --output is absent

    def __post_init__(self):
        if (self.dataset is None) == (self.synthetic is None):
            raise ConfigError("exactly one of 'dataset' and 'synthetic' must be given")
        ms = tuple(self.m_values)
        object.__setattr__(self, "m_values", ms)
        if not ms:
            raise ConfigError("m_values must not be empty")
        if any(int(m) != m or m < 0 for m in ms):
            raise ConfigError(f"m_values must be non-negative integers, got {list(ms)}")
        if any(a >= b for a, b in zip(ms, ms[1:])):
            raise ConfigError(f"m_values must be strictly ascending, got {list(ms)}")
        kind = self.model.get("type")
        if kind not in MODEL_TYPES:
            raise ConfigError(f"model type must be one of {MODEL_TYPES}, got {kind!r}")
        if not self.gamma > 0:
            raise ConfigError(f"gamma must be positive, got {self.gamma}")
        if self.alpha_tilde is not None and not self.alpha_tilde > 0:
            raise ConfigError(f"alpha_tilde must be positive, got {self.alpha_tilde}")
        if self.inverse_mode not in ("exact", "nystroem"):
            raise ConfigError(f"inverse_mode must be 'exact' or 'nystroem', "
                              f"got {self.inverse_mode!r}")
        if self.inverse_mode == "nystroem":
            f = self.landmark_fraction
            if f is None or not 0.0 < f <= 1.0:
                raise ConfigError(f"landmark_fraction must lie in (0, 1], got {f}")
        if self.on_exhausted not in ("saturate", "error"):
            raise ConfigError(f"on_exhausted must be 'saturate' or 'error', "
                              f"got {self.on_exhausted!r}")
        if self.k < 2:
            raise ConfigError(f"k must be at least 2, got {self.k}")

    @property
    def effective_alpha_tilde(self) -> float:
        if self.alpha_tilde is not None:
            return float(self.alpha_tilde)
        return DEFAULT_ALPHA_TILDE_KRR if self.model["type"] == "krr" else DEFAULT_ALPHA_TILDE_SVR

    @classmethod
    def from_dict(cls, d: dict, base_dir=None) -> "ExperimentConfig":
        _require(d, {"dataset", "synthetic", "model", "kernel", "decomposition", "cv",
                     "metrics", "output_path"}, "config")
        kw = {}
        if "dataset" in d:
            ds = dict(d["dataset"])
            if base_dir is not None and "path" in ds and not Path(ds["path"]).is_absolute():
                ds["path"] = str(Path(base_dir) / ds["path"])
            try:
                kw["dataset"] = DatasetSpec.from_dict(ds)
            except FairKernelError as exc:
                raise ConfigError(str(exc)) from exc
        if "synthetic" in d:
            kw["synthetic"] = dict(d["synthetic"])
        model = dict(d.get("model", {"type": "svr"}))
        kind = model.get("type")
        allowed = {"krr": {"type", "alpha"}, "svr": {"type", "epsilon", "C"},
                   "dummy": {"type"}}.get(kind, {"type"})
        _require(model, allowed, "model")
        if kind == "krr":
            model.setdefault("alpha", KRR_ALPHA)
        elif kind == "svr":
            model.setdefault("epsilon", SVR_DEFAULTS["crimes"]["epsilon"])
            model.setdefault("C", SVR_DEFAULTS["crimes"]["C"])
        kw["model"] = model
        kernel = d.get("kernel", {})
        _require(kernel, {"type", "gamma"}, "kernel")
        if kernel.get("type", "rbf") != "rbf":
            raise ConfigError(f"only the rbf kernel is supported, got {kernel['type']!r}")
        if "gamma" in kernel:
            kw["gamma"] = float(kernel["gamma"])
        dec = d.get("decomposition", {})
        dec_keys = ("alpha_tilde", "m_values", "inverse_mode", "landmark_fraction", "lazy",
                    "on_exhausted")
        _require(dec, set(dec_keys), "decomposition")
        for key in dec_keys:
            if key in dec:
                kw[key] = dec[key]
        cv = d.get("cv", {})
        _require(cv, {"k", "seed"}, "cv")
        kw.update(cv)
        metrics = d.get("metrics", {})
        _require(metrics, {"bandwidth", "grid_size"}, "metrics")
        try:
            kw["kde"] = KdeParams(**metrics)
        except FairKernelError as exc:
            raise ConfigError(str(exc)) from exc
        if d.get("output_path") is not None:
            out = Path(d["output_path"])
            if base_dir is not None and not out.is_absolute():
                out = Path(base_dir) / out
            kw["output_path"] = str(out)
        return cls(**kw)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            d = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise ConfigError(f"{path}: config file not found") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(d, base_dir=path.parent)

    def to_dict(self) -> dict:
        out = {
            "model": dict(self.model),
            "kernel": {"type": "rbf", "gamma": self.gamma},
            "decomposition": {
                "alpha_tilde": self.effective_alpha_tilde,
                "m_values": list(self.m_values),
                "inverse_mode": self.inverse_mode,
                "landmark_fraction": self.landmark_fraction,
                "lazy": self.lazy,
                "on_exhausted": self.on_exhausted,
            },
            "cv": {"k": self.k, "seed": self.seed},
            "metrics": {"bandwidth": self.kde.bandwidth, "grid_size": self.kde.grid_size},
        }
        if self.dataset is not None:
            out["dataset"] = self.dataset.to_dict()
        else:
            out["synthetic"] = dict(self.synthetic)
        return out


def load_dataset(config: ExperimentConfig) -> TabularDataset:
    if config.dataset is not None:
        return load_csv(config.dataset)
    try:
        return synthetic_dataset(**config.synthetic)
    except TypeError as exc:
        raise ConfigError(f"bad synthetic dataset parameters: {exc}") from exc


@dataclass
class ExperimentResult:
    config: dict
    metric_names: list
    folds: list           # one entry per (fold, m)
    aggregates: dict      # m -> metric -> {"mean", "std"}
    warnings: list
    runtime_ms: dict = field(default_factory=dict)

    def to_dict(self, include_runtime: bool = False) -> dict:
        out = {
            "config": self.config,
            "metric_names": list(self.metric_names),
            "folds": self.folds,
            "aggregates": {str(m): v for m, v in self.aggregates.items()},
            "warnings": list(self.warnings),
        }
        if include_runtime:
            out["runtime_ms"] = self.runtime_ms
        return out

    def rows(self):
        """Flat (m, metric, mean, std) records in sweep order."""
        for m, per_metric in self.aggregates.items():
            for name in self.metric_names:
                yield int(m), name, per_metric[name]["mean"], per_metric[name]["std"]


def metric_names(protected_names) -> list:
    if len(protected_names) == 1:
        return ["mae", "gdp", "hgr", "pf"]
    names = ["mae"]
    for p in protected_names:
        names += [f"gdp:{p}", f"hgr:{p}", f"pf:{p}"]
    return names


def score(y, yhat, P, protected_names, kde: KdeParams) -> dict:
    """Every measure from one prediction vector."""
    out = {"mae": mae(y, yhat)}
    suffix = (lambda name: "") if len(protected_names) == 1 else (lambda name: f":{name}")
    constant = np.ptp(yhat) == 0
    for j, name in enumerate(protected_names):
        p = P[:, j]
        out["gdp" + suffix(name)] = gdp(yhat, p, kde)
        out["hgr" + suffix(name)] = 0.0 if constant else hgr_estimate(yhat, p, kde)
        out["pf" + suffix(name)] = pairwise_fairness(y, yhat, p)
    return out


def _fold_standardize(X_train, X_test):
    mean = X_train.mean(axis=0)
    std = X_train.std(axis=0)
    constant = std == 0
    std = np.where(constant, 1.0, std)
    stats = Standardization(mean, std)
    return (X_train - stats.mean) / stats.std, (X_test - stats.mean) / stats.std, int(constant.sum())


def _fit_predict(model: dict, K, Kc, y):
    kind = model["type"]
    if kind == "krr":
        fitted = krr_fit(K, y, alpha=model["alpha"])
        return fitted, lambda: fitted.predict(Kc)
    if kind == "svr":
        fitted = svr_fit(K, y, epsilon=model["epsilon"], C=model["C"])
        return fitted, lambda: fitted.predict(Kc)
    fitted = dummy_fit(y)
    return fitted, lambda: fitted.predict(Kc.shape[0])


def run_fold(config: ExperimentConfig, data: TabularDataset, train, test, fold: int):
    timings = dict.fromkeys(PHASES, 0.0)
    warnings = []
    clock = time.perf_counter

    t0 = clock()
    X_raw = data.X_raw
    Xtr, Xte, constant = _fold_standardize(X_raw[train], X_raw[test])
    if constant:
        warnings.append(f"fold {fold}: {constant} feature columns constant on the training part")
    K = rbf_kernel(Xtr, config.gamma)
    Kc = rbf_cross_kernel(Xte, Xtr, config.gamma)
    timings["kernel"] += clock() - t0

    ytr, yte = data.y[train], data.y[test]
    Ptr, Pte = data.P[train], data.P[test]
    nys = None
    if config.inverse_mode == "nystroem":
        nys = NystroemParams.from_fraction(len(train), config.landmark_fraction,
                                           derive_seed(config.seed, 1, fold))

    t0 = clock()
    try:
        if config.model["type"] == "dummy":
            path = [(K, None)] * len(config.m_values)
        else:
            path = decompose_path(K, Ptr, config.m_values, config.effective_alpha_tilde,
                                  nystroem=nys, lazy=config.lazy,
                                  saturate=config.on_exhausted == "saturate")
    except FairKernelError as exc:
        raise ExperimentError(f"decomposition failed: {exc}", fold=fold, cause=exc) from exc
    timings["decompose"] += clock() - t0

    records = []
    for m, (K_m, transform) in zip(config.m_values, path):
        try:
            t0 = clock()
            Kc_m = Kc if transform is None else apply_transform(Kc, transform)
            timings["decompose"] += clock() - t0
            t0 = clock()
            fitted, predict = _fit_predict(config.model, K_m, Kc_m, ytr)
            timings["fit"] += clock() - t0
            t0 = clock()
            yhat = predict()
            timings["predict"] += clock() - t0
            t0 = clock()
            scores = score(yte, yhat, Pte, data.protected_names, config.kde)
            timings["metrics"] += clock() - t0
        except FairKernelError as exc:
            raise ExperimentError(str(exc), fold=fold, m=m, cause=exc) from exc
        done = int(m) if transform is None else transform.m
        rec = {"fold": fold, "m": int(m), "iterations": done, "n_train": int(len(train)),
               "n_test": int(len(test)), "metrics": scores}
        if done < m:
            warnings.append(f"fold {fold}: protected information exhausted after {done} "
                            f"iterations; m = {m} reuses that kernel")
        if transform is not None and transform.per_iteration:
            last = transform.per_iteration[-1]
            rec["last_iteration"] = last.to_dict()
        if hasattr(fitted, "support_indices"):
            rec["support_vectors"] = int(len(fitted.support_indices))
        records.append(rec)
    return records, warnings, {k: v * 1e3 for k, v in timings.items()}


def aggregate(records, m_values, names) -> dict:
    out = {}
    for m in m_values:
        rows = [r["metrics"] for r in records if r["m"] == m]
        out[int(m)] = {}
        for name in names:
            vals = np.array([r[name] for r in rows])
            std = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
            out[int(m)][name] = {"mean": float(vals.mean()), "std": std}
    return out


def run_experiment(config: ExperimentConfig, threads: int = 1,
                   data: TabularDataset | None = None) -> ExperimentResult:
    """Cross-validated sweep over ``config.m_values``.

    Folds run in up to ``threads`` worker threads; results are assembled in
    fold order, so the output does not depend on scheduling.
    """
    start = time.perf_counter()
    data = load_dataset(config) if data is None else data
    plan = kfold(data.n, config.k, config.seed)
    names = metric_names(data.protected_names)

    def job(fold):
        train, test = plan.split(fold)
        return run_fold(config, data, train, test, fold)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outputs = list(pool.map(job, range(config.k)))
    else:
        outputs = [job(f) for f in range(config.k)]

    records, warnings = [], list(data.warnings)
    runtime = dict.fromkeys(PHASES, 0.0)
    for recs, warns, times in outputs:
        records += recs
        warnings += warns
        for k, v in times.items():
            runtime[k] += v
    runtime["total"] = (time.perf_counter() - start) * 1e3
    return ExperimentResult(config.to_dict(), names, records,
                            aggregate(records, config.m_values, names), warnings, runtime)


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

@dataclass
class SweepResult:
    parameter: str
    values: list
    results: list                 # ExperimentResult per value
    reference: ExperimentResult | None = None

    def deltas(self) -> list:
        """Per value, ``mean - reference mean`` keyed by m then metric."""
        if self.reference is None:
            return []
        out = []
        for res in self.results:
            d = {}
            for m, per_metric in res.aggregates.items():
                ref = self.reference.aggregates[m]
                d[m] = {k: v["mean"] - ref[k]["mean"] for k, v in per_metric.items()}
            out.append(d)
        return out

    def to_dict(self, include_runtime: bool = False) -> dict:
        out = {
            "parameter": self.parameter,
            "values": list(self.values),
            "results": [r.to_dict(include_runtime) for r in self.results],
        }
        if self.reference is not None:
            out["reference"] = self.reference.to_dict(include_runtime)
            out["deltas"] = [{str(m): v for m, v in d.items()} for d in self.deltas()]
        return out

    def rows(self):
        """Flat (value, m, metric, mean, std, delta) records."""
        deltas = self.deltas()
        if self.reference is not None:
            for m, name, mean, std in self.reference.rows():
                yield "exact", m, name, mean, std, 0.0
        for i, (value, res) in enumerate(zip(self.values, self.results)):
            for m, name, mean, std in res.rows():
                delta = deltas[i][m][name] if deltas else None
                yield value, m, name, mean, std, delta


def sweep_alpha_tilde(config: ExperimentConfig, alpha_values, threads: int = 1) -> SweepResult:
    alpha_values = list(alpha_values)
    if not alpha_values:
        raise ConfigError("alpha_tilde sweep needs at least one value")
    configs = [replace(config, alpha_tilde=float(a)) for a in alpha_values]
    data = load_dataset(config)
    return SweepResult("alpha_tilde", [float(a) for a in alpha_values],
                       [run_experiment(c, threads, data) for c in configs])


def sweep_nystroem(config: ExperimentConfig, fractions, threads: int = 1) -> SweepResult:
    fractions = list(fractions)
    if not fractions:
        raise ConfigError("landmark sweep needs at least one fraction")
    configs = [replace(config, inverse_mode="nystroem", landmark_fraction=float(f))
               for f in fractions]
    data = load_dataset(config)
    reference = run_experiment(replace(config, inverse_mode="exact", landmark_fraction=None),
                               threads, data)
    return SweepResult("landmark_fraction", [float(f) for f in fractions],
                       [run_experiment(c, threads, data) for c in configs], reference)


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(["" if v is None else repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def emit_results(result, path, stem: str = "results", include_runtime: bool = False):
    """Write ``<stem>.json`` (full detail) and ``<stem>.csv`` (one row per m and metric).

    Wall-clock timings vary between runs and are left out unless
    ``include_runtime`` is set, so that repeated runs give identical files.
    """
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    json_path, csv_path = out / f"{stem}.json", out / f"{stem}.csv"
    json_path.write_text(json.dumps(result.to_dict(include_runtime), indent=2,
                                    sort_keys=True) + "\n", encoding="utf-8")
    if isinstance(result, SweepResult):
        text = _csv_text([result.parameter, "m", "metric", "mean", "std", "delta"],
                         result.rows())
    else:
        text = _csv_text(["m", "metric", "mean", "std"], result.rows())
    csv_path.write_text(text, encoding="utf-8")
    return json_path, csv_path
