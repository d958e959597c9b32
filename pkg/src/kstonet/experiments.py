"""Reproducible experiment drivers.

Every driver takes a parameter dataclass, writes ``metrics.csv`` and
``summary.json`` (both free of wall-clock values so re-runs are
byte-identical) plus ``timing.json``, and returns the summary.
"""

from __future__ import annotations

import csv
import json
import os
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import numpy as np

from .data import Dataset, gen_full_rank, gen_knn_data, gen_measurement_error, split
from .errors import ConfigError, InputError
from .glm import LassoConfig
from .imputation import HmcConfig
from .model import NetConfig, Task
from .svr import SvrConfig
from .trainer import TrainConfig, iro_train, predict, predict_mean, sgd_mlp_train
from .uq import coverage as interval_coverage
from .uq import interval

QSAR_ENV = "KSTONET_QSAR_PATH"
QSAR_DEFAULT = "data/qsar_androgen_receptor.csv"


def derive_seed(seed: int, *keys: int) -> int:
    """Independent 32-bit seed for a sub-task."""
    return int(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
               .generate_state(1)[0])


def _write_rows(path: Path, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def _finish(out_dir, header, rows, summary: dict, started: float) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_rows(out / "metrics.csv", header, rows)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                                      encoding="utf-8")
    (out / "timing.json").write_text(json.dumps({"seconds": time.perf_counter() - started}) + "\n",
                                     encoding="utf-8")
    return summary


def _train_cfg(epochs, lr, alpha, cost, eps, seed, threads, lam=1e-4, ols=False,
               average_last_k=1) -> TrainConfig:
    return TrainConfig(epochs=epochs, hmc=HmcConfig(steps=25, lr=lr, alpha=alpha, seed=seed),
                       svr=SvrConfig(cost=cost, epsilon=eps), lasso=LassoConfig(lam=lam),
                       ols=ols, average_last_k=average_last_k, seed=seed, threads=threads)


def params_from_dict(cls, doc: Optional[dict]):
    """Instantiate an experiment parameter class, rejecting unknown keys."""
    doc = dict(doc or {})
    names = {f.name for f in fields(cls)}
    bad = sorted(set(doc) - names)
    if bad:
        raise ConfigError(f"unknown {cls.__name__} keys: {bad}")
    for f in fields(cls):
        if f.name in doc and isinstance(doc[f.name], list):
            doc[f.name] = tuple(doc[f.name])
    return cls(**doc)


# ----------------------------------------------------------------------
# full row-rank DNN data


@dataclass(frozen=True)
class FullRankParams:
    n: int = 1000
    n_test: int = 1000
    p: int = 1000
    epochs: int = 40
    seed: int = 0
    threads: int = 1
    hidden_widths: tuple[int, ...] = (5,)
    c_noise: float = 1.0
    sigma_sq: float = 0.001
    lr: float = 5e-7
    alpha: float = 0.1
    svr_cost: float = 1.0
    svr_epsilon: float = 0.1
    lam: float = 1e-4
    sgd_epochs: int = 0
    sgd_lr: float = 0.005
    sgd_batch: int = 100


def full_rank(params: FullRankParams, out_dir) -> dict:
    started = time.perf_counter()
    ds = gen_full_rank(params.n + params.n_test, params.p, derive_seed(params.seed, 0))
    train, test = ds.subset(slice(0, params.n)), ds.subset(slice(params.n, None))
    net = NetConfig(hidden_widths=params.hidden_widths, c_noise=params.c_noise,
                    eps_noise=params.svr_epsilon,
                    sigma_sq=(params.sigma_sq,) * len(params.hidden_widths))
    cfg = _train_cfg(params.epochs, params.lr, params.alpha, params.svr_cost, params.svr_epsilon,
                     params.seed, params.threads, params.lam)
    _, traces = iro_train(train, net, cfg, test)
    rows = [("kstonet", t.epoch, t.train_metric, t.test_metric) for t in traces]
    summary: dict[str, Any] = {"experiment": "full_rank", "params": asdict(params)}
    summary.update(_path_summary([t.train_metric for t in traces], [t.test_metric for t in traces]))
    if params.sgd_epochs:
        _, sgd = sgd_mlp_train(train, (5, 5), lr=params.sgd_lr, epochs=params.sgd_epochs,
                               batch=params.sgd_batch, seed=derive_seed(params.seed, 1), test=test)
        rows += [("sgd_dnn", t.epoch, t.train_metric, t.test_metric) for t in sgd]
        summary["sgd_final_train_mse"] = sgd[-1].train_metric
        summary["sgd_min_train_mse"] = min(t.train_metric for t in sgd)
    return _finish(out_dir, ("model", "epoch", "train_mse", "test_mse"), rows, summary, started)


def _path_summary(train: Sequence[float], test: Sequence[float]) -> dict:
    train = np.asarray(train)
    test = np.asarray(test)
    out: dict[str, Any] = {"final_train_mse": float(train[-1]) if train.size else None,
                           "min_train_mse": float(train.min()) if train.size else None}
    if test.size and np.all(np.isfinite(test)):
        k = int(np.argmin(test))
        out["min_test_mse"] = float(test[k])
        out["final_test_mse"] = float(test[-1])
        out["test_rise_after_min"] = float(test[k:].max() / test[k] - 1.0)
    below = np.flatnonzero(train <= 2.0)
    out["first_epoch_train_le_2"] = int(below[0]) + 1 if below.size else None
    return out


# ----------------------------------------------------------------------
# planted kernel-network data


@dataclass(frozen=True)
class KnnSimParams:
    n: int = 5000
    n_test: int = 5000
    p: int = 5
    epochs: int = 20
    seed: int = 0
    threads: int = 1
    hidden_widths: tuple[int, ...] = (5,)
    c_noise: float = 5.0
    sigma_sq: float = 0.001
    lr: float = 5e-4
    alpha: float = 0.1
    svr_cost: float = 5.0
    svr_epsilon: float = 0.01
    lam: float = 1e-4


def knn_sim(params: KnnSimParams, out_dir) -> dict:
    started = time.perf_counter()
    ds = gen_knn_data(params.n, params.p, derive_seed(params.seed, 0), n_test=params.n_test)
    train, test = ds.subset(slice(0, params.n)), ds.subset(slice(params.n, None))
    net = NetConfig(hidden_widths=params.hidden_widths, c_noise=params.c_noise,
                    eps_noise=params.svr_epsilon,
                    sigma_sq=(params.sigma_sq,) * len(params.hidden_widths))
    cfg = _train_cfg(params.epochs, params.lr, params.alpha, params.svr_cost, params.svr_epsilon,
                     params.seed, params.threads, params.lam)
    _, traces = iro_train(train, net, cfg, test)
    rows = [("kstonet", t.epoch, t.train_metric, t.test_metric) for t in traces]
    summary = {"experiment": "knn_sim", "params": asdict(params)}
    summary.update(_path_summary([t.train_metric for t in traces], [t.test_metric for t in traces]))
    return _finish(out_dir, ("model", "epoch", "train_mse", "test_mse"), rows, summary, started)


# ----------------------------------------------------------------------
# measurement-error data


@dataclass(frozen=True)
class MeasurementErrorParams:
    n: int = 500
    n_test: int = 500
    epochs: int = 1000
    seed: int = 0
    threads: int = 1
    hidden_widths: tuple[int, ...] = (5,)
    c_noise: float = 1.0
    sigma_sq_hidden: float = 0.001
    sigma_sq_output: float = 0.01
    lr: float = 5e-5
    alpha: float = 1.0
    svr_cost: float = 1.0
    svr_epsilon: float = 0.01
    lam: float = 1e-4
    error_var: float = 0.5
    error_is_sd: bool = False


def _measurement_data(params, seed_key: int):
    gen = lambda n, k: gen_measurement_error(  # noqa: E731
        n, derive_seed(params.seed, seed_key, k), error_var=params.error_var,
        error_is_sd=params.error_is_sd)
    return gen(params.n, 0), gen(params.n_test, 1)


def _measurement_net(params, eps: float) -> NetConfig:
    h = len(params.hidden_widths)
    s2 = (params.sigma_sq_hidden,) * (h - 1) + (params.sigma_sq_output,)
    return NetConfig(hidden_widths=params.hidden_widths, c_noise=params.c_noise, eps_noise=eps,
                     sigma_sq=s2)


def measurement_error(params: MeasurementErrorParams, out_dir) -> dict:
    started = time.perf_counter()
    train, test = _measurement_data(params, 0)
    net = _measurement_net(params, params.svr_epsilon)
    cfg = _train_cfg(params.epochs, params.lr, params.alpha, params.svr_cost, params.svr_epsilon,
                     params.seed, params.threads, params.lam)
    _, traces = iro_train(train, net, cfg, test)
    rows = [(t.epoch, t.train_metric, t.test_metric, t.sv_count_mean) for t in traces]
    summary = {"experiment": "measurement_error", "params": asdict(params),
               "final_sv_count_mean": traces[-1].sv_count_mean if traces else None}
    summary.update(_path_summary([t.train_metric for t in traces], [t.test_metric for t in traces]))
    return _finish(out_dir, ("epoch", "train_mse", "test_mse", "sv_count_mean"), rows, summary,
                   started)


@dataclass(frozen=True)
class SparsitySweepParams(MeasurementErrorParams):
    hidden_widths: tuple[int, ...] = (20, 20, 20)
    epsilons: tuple[float, ...] = (0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08, 0.09, 0.1)
    repeats: int = 1


def sparsity_sweep(params: SparsitySweepParams, out_dir) -> dict:
    """Support-vector counts of the first layer at the last epoch for each epsilon."""
    started = time.perf_counter()
    rows = []
    per_eps: dict[str, dict] = {}
    for r in range(params.repeats):
        train, test = _measurement_data(params, r)
        for eps in params.epsilons:
            net = _measurement_net(params, eps)
            cfg = _train_cfg(params.epochs, params.lr, params.alpha, params.svr_cost, eps,
                             derive_seed(params.seed, 100 + r), params.threads, params.lam)
            _, traces = iro_train(train, net, cfg, test)
            last = traces[-1]
            rows.append((eps, r, last.sv_count_mean, last.train_metric, last.test_metric))
            per_eps.setdefault(repr(float(eps)), {"sv": [], "train": [], "test": []})
            rec = per_eps[repr(float(eps))]
            rec["sv"].append(last.sv_count_mean)
            rec["train"].append(last.train_metric)
            rec["test"].append(last.test_metric)
    table = {k: {"sv_count_mean": float(np.mean(v["sv"])),
                 "sv_count_sd": float(np.std(v["sv"], ddof=1)) if len(v["sv"]) > 1 else 0.0,
                 "train_mse": float(np.mean(v["train"])), "test_mse": float(np.mean(v["test"]))}
             for k, v in per_eps.items()}
    summary = {"experiment": "sparsity_sweep", "params": asdict(params), "table": table}
    lo, hi = repr(float(min(params.epsilons))), repr(float(max(params.epsilons)))
    if table[lo]["sv_count_mean"] > 0:
        summary["sv_ratio_max_to_min_eps"] = table[hi]["sv_count_mean"] / table[lo]["sv_count_mean"]
    return _finish(out_dir, ("epsilon", "repeat", "sv_count_mean", "train_mse", "test_mse"), rows,
                   summary, started)


# ----------------------------------------------------------------------
# QSAR androgen receptor (binary classification, external file)


def load_qsar(path) -> Dataset:
    """Read the semicolon-separated file: 1024 binary fingerprint bits then a label.

    Labels ``positive``/``negative`` (or 1/0) map to 1/0.  A header row, if
    present, is skipped.
    """
    path = Path(path)
    rows, labels = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(";") if ";" in line else line.split(",")
            lab = parts[-1].strip().lower()
            if lab in ("positive", "1", "1.0"):
                y = 1.0
            elif lab in ("negative", "0", "0.0"):
                y = 0.0
            elif lineno == 1:
                continue
            else:
                raise InputError(f"{path}:{lineno}: unrecognised label {parts[-1]!r}")
            try:
                rows.append([float(v) for v in parts[:-1]])
            except ValueError as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from None
            labels.append(y)
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise InputError(f"{path}: rows have differing numbers of fields {sorted(widths)}")
    return Dataset(np.array(rows), np.array(labels), task="binary_classification",
                   meta={"source": str(path)})


@dataclass(frozen=True)
class QsarParams:
    path: Optional[str] = None
    folds: int = 5
    epochs: int = 40
    average_last_k: int = 10
    seed: int = 0
    threads: int = 1
    hidden_widths: tuple[int, ...] = (5,)
    c_noise: float = 1.0
    sigma_sq: float = 0.001
    lr: float = 5e-5
    alpha: float = 0.1
    svr_cost: float = 1.0
    svr_epsilon: float = 0.1
    lam: float = 1e-4


def qsar_path(params: QsarParams) -> Optional[Path]:
    for cand in (params.path, os.environ.get(QSAR_ENV), QSAR_DEFAULT):
        if cand and Path(cand).is_file():
            return Path(cand)
    return None


def qsar_cv(params: QsarParams, out_dir) -> dict:
    started = time.perf_counter()
    path = qsar_path(params)
    if path is None:
        summary = {"experiment": "qsar_cv", "status": "skipped",
                   "reason": f"dataset not found (set {QSAR_ENV} or pass path)",
                   "params": asdict(params)}
        return _finish(out_dir, ("fold", "train_accuracy", "test_accuracy"), [], summary, started)
    ds = load_qsar(path)
    net = NetConfig(hidden_widths=params.hidden_widths, task=Task.BINARY, c_noise=params.c_noise,
                    eps_noise=params.svr_epsilon,
                    sigma_sq=(params.sigma_sq,) * len(params.hidden_widths))
    rows = []
    for k, (train, test) in enumerate(split(ds, seed=derive_seed(params.seed, 0),
                                            k_folds=params.folds)):
        cfg = _train_cfg(params.epochs, params.lr, params.alpha, params.svr_cost,
                         params.svr_epsilon, derive_seed(params.seed, 1, k), params.threads,
                         params.lam, average_last_k=params.average_last_k)
        models, _ = iro_train(train, net, cfg)
        kk = params.average_last_k
        tr_acc = float(np.mean(predict(models, train.X, kk) == train.y))
        te_acc = float(np.mean(predict(models, test.X, kk) == test.y))
        rows.append((k, tr_acc, te_acc))
    summary = {"experiment": "qsar_cv", "status": "ok", "params": asdict(params),
               "mean_train_accuracy": float(np.mean([r[1] for r in rows])),
               "mean_test_accuracy": float(np.mean([r[2] for r in rows]))}
    return _finish(out_dir, ("fold", "train_accuracy", "test_accuracy"), rows, summary, started)


# ----------------------------------------------------------------------
# prediction-interval coverage


@dataclass(frozen=True)
class CoverageParams:
    n_datasets: int = 20
    n: int = 500
    n_test: int = 200
    epochs: int = 50
    level: float = 0.95
    average_last_k: int = 1
    seed: int = 0
    threads: int = 1
    hidden_widths: tuple[int, ...] = (5,)
    c_noise: float = 10.0
    sigma_sq: float = 0.001
    lr: float = 5e-6
    alpha: float = 0.1
    svr_cost: float = 10.0
    svr_epsilon: float = 0.05
    error_var: float = 0.5
    error_is_sd: bool = False


def coverage(params: CoverageParams, out_dir) -> dict:
    """Empirical coverage of nominal intervals over independent training sets."""
    started = time.perf_counter()
    test = gen_measurement_error(params.n_test, derive_seed(params.seed, 0),
                                 error_var=params.error_var, error_is_sd=params.error_is_sd)
    net = NetConfig(hidden_widths=params.hidden_widths, c_noise=params.c_noise,
                    eps_noise=params.svr_epsilon,
                    sigma_sq=(params.sigma_sq,) * len(params.hidden_widths))
    rows = []
    hits = np.zeros(params.n_test)
    for d in range(params.n_datasets):
        train = gen_measurement_error(params.n, derive_seed(params.seed, 1, d),
                                      error_var=params.error_var, error_is_sd=params.error_is_sd)
        cfg = TrainConfig(epochs=params.epochs,
                          hmc=HmcConfig(steps=25, lr=params.lr, alpha=params.alpha,
                                        seed=derive_seed(params.seed, 2, d)),
                          svr=SvrConfig(cost=params.svr_cost, epsilon=params.svr_epsilon),
                          ols=True, average_last_k=params.average_last_k,
                          seed=derive_seed(params.seed, 2, d), threads=params.threads)
        models, traces = iro_train(train, net, cfg, test)
        iv = interval(models, train.X, train.y, test.X, params.level, params.average_last_k)
        cov = interval_coverage(iv, test.y)
        hits += cov
        rows.append((d, traces[-1].train_metric if traces else float("nan"),
                     traces[-1].test_metric if traces else float("nan"),
                     float(cov.mean()), float(np.mean(iv.half_width))))
    per_point = hits / max(params.n_datasets, 1)
    per_data = np.array([r[3] for r in rows])
    summary = {"experiment": "coverage", "params": asdict(params),
               "mean_coverage": float(per_point.mean()),
               "coverage_sd_over_points": float(per_point.std(ddof=1)) if params.n_test > 1 else 0.0,
               "coverage_sd_over_datasets": float(per_data.std(ddof=1)) if per_data.size > 1 else 0.0}
    return _finish(out_dir, ("dataset", "train_mse", "test_mse", "coverage", "mean_half_width"),
                   rows, summary, started)


EXPERIMENTS: dict[str, tuple[type, Callable]] = {
    "full_rank": (FullRankParams, full_rank),
    "knn_sim": (KnnSimParams, knn_sim),
    "measurement_error": (MeasurementErrorParams, measurement_error),
    "sparsity_sweep": (SparsitySweepParams, sparsity_sweep),
    "qsar_cv": (QsarParams, qsar_cv),
    "coverage": (CoverageParams, coverage),
}


def run_experiment(name: str, out_dir, doc: Optional[dict] = None, **overrides) -> dict:
    if name not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {name!r}; choose from {sorted(EXPERIMENTS)}")
    cls, fn = EXPERIMENTS[name]
    merged = dict(doc or {})
    merged.update({k: v for k, v in overrides.items() if v is not None})
    params = params_from_dict(cls, merged)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "effective_config.json").write_text(
        json.dumps({"experiment": name, **asdict(params)}, indent=2, sort_keys=True) + "\n",
        encoding="utf-8")
    return fn(params, out)
