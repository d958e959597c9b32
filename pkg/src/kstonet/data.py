"""Datasets, CSV ingestion, splitting, standardization and simulators."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import InputError
from .kernel import rbf_matrix
from .svr import SvrConfig, svr_fit

CACHE_TAG = "kstonet-dataset/1"


@dataclass(frozen=True)
class Standardization:
    """Per-column affine map ``(x - mean) / scale``."""

    mean: np.ndarray
    scale: np.ndarray

    def apply(self, X):
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.scale

    def invert(self, Z):
        return np.asarray(Z, dtype=np.float64) * self.scale + self.mean


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    feature_names: tuple[str, ...] = ()
    standardization: Optional[Standardization] = None
    task: str = "regression"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        if X.ndim != 2:
            raise InputError(f"X must be 2-D, got shape {X.shape}")
        if X.shape[0] != y.shape[0]:
            raise InputError(f"{X.shape[0]} rows in X but {y.shape[0]} targets")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise InputError("dataset contains NaN or Inf")
        if self.task not in ("regression", "binary_classification"):
            raise InputError(f"unknown task {self.task!r}")
        if self.task == "binary_classification" and not np.all((y == 0) | (y == 1)):
            raise InputError("binary classification labels must be 0 or 1")
        names = tuple(self.feature_names) or tuple(f"x{j + 1}" for j in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise InputError(f"{len(names)} feature names for {X.shape[1]} columns")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "feature_names", names)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def subset(self, rows) -> "Dataset":
        return replace(self, X=self.X[rows], y=self.y[rows], meta=dict(self.meta))


# ----------------------------------------------------------------------
# simulators


def equicorrelated_normal(rng: np.random.Generator, n: int, p: int) -> np.ndarray:
    """Standard normal columns with pairwise correlation 0.5 via a shared factor."""
    e = rng.standard_normal((n, 1))
    z = rng.standard_normal((n, p))
    return (e + z) / np.sqrt(2.0)


def gen_full_rank(n: int = 2000, p: int = 1000, seed: int = 0, hidden: Sequence[int] = (5, 5),
                  noise_sd: float = 1.0, zero_weights: bool = False) -> Dataset:
    """Responses from a tanh network with weights drawn from {-2, -1, 1, 2}.

    The same planted network generates every row, so one call should
    produce both training and test rows.
    """
    rng = np.random.default_rng(seed)
    X = equicorrelated_normal(rng, n, p)
    widths = (p, *hidden, 1)
    weights = [rng.choice(np.array([-2.0, -1.0, 1.0, 2.0]), size=(b, a))
               for a, b in zip(widths, widths[1:])]
    if zero_weights:
        weights = [np.zeros_like(w) for w in weights]
    h = X
    for w in weights[:-1]:
        h = np.tanh(h @ w.T)
    mean = (h @ weights[-1].T)[:, 0]
    y = mean + noise_sd * rng.standard_normal(n)
    return Dataset(X, y, meta={"generator": "full_rank", "seed": seed, "n": n, "p": p,
                               "noise_sd": noise_sd})


def gen_knn_data(n: int = 5000, p: int = 5, seed: int = 0, n_test: int = 0, units: int = 5,
                 gamma: Optional[float] = None, noise_sd: float = 1.0,
                 svr: SvrConfig = SvrConfig(cost=5.0, epsilon=0.01)) -> Dataset:
    """Data from a planted kernel-expanded network.

    The first-layer weights and biases are the dual coefficients of SVRs
    fitted to N(0, I) targets on the first ``n`` inputs; ``n_test`` more
    rows are drawn from the same model.  The returned dataset holds
    ``n + n_test`` rows; the planted parameters are in ``meta``.
    """
    rng = np.random.default_rng(seed)
    X = equicorrelated_normal(rng, n + n_test, p)
    Xtr = X[:n]
    g = 1.0 / p if gamma is None else float(gamma)
    K = rbf_matrix(Xtr, Xtr, g)
    targets = rng.standard_normal((n, units))
    w1 = np.empty((units, n))
    b1 = np.empty(units)
    for k in range(units):
        fit = svr_fit(Xtr, targets[:, k], svr, g, gram=K)
        w1[k] = fit.dual_coefs
        b1[k] = fit.bias
    w2 = rng.standard_normal(units)
    b2 = float(rng.standard_normal())
    mean = planted_knn_mean(X, Xtr, w1, b1, w2, b2, g)
    y = mean + noise_sd * rng.standard_normal(n + n_test)
    meta = {"generator": "knn", "seed": seed, "n": n, "n_test": n_test, "p": p, "gamma": g,
            "noise_sd": noise_sd, "w2": w2.tolist(), "b2": b2, "b1": b1.tolist()}
    ds = Dataset(X, y, meta=meta)
    object.__setattr__(ds, "planted", {"w1": w1, "b1": b1, "w2": w2, "b2": b2, "gamma": g})
    return ds


def planted_knn_mean(X, train_X, w1, b1, w2, b2, gamma) -> np.ndarray:
    k = rbf_matrix(X, train_X, gamma)
    return np.tanh(k @ w1.T + b1) @ w2 + b2


def measurement_error_mean(X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    x1, x2, x3, x4, x5 = X.T[:5]
    return 5.0 * x2 / (1.0 + x1**2) + 5.0 * np.sin(x3 * x4) + 2.0 * x5


def gen_measurement_error(n: int = 500, seed: int = 0, noise_sd: float = 1.0,
                          error_var: float = 0.5, error_is_sd: bool = False) -> Dataset:
    """Nonlinear regression on five equicorrelated inputs observed with error.

    The additive input error has variance ``error_var`` unless
    ``error_is_sd`` is set, in which case ``error_var`` is its standard
    deviation.
    """
    rng = np.random.default_rng(seed)
    X = equicorrelated_normal(rng, n, 5)
    y = measurement_error_mean(X) + noise_sd * rng.standard_normal(n)
    sd = error_var if error_is_sd else np.sqrt(error_var)
    Xobs = X + sd * rng.standard_normal((n, 5))
    return Dataset(Xobs, y, meta={"generator": "measurement_error", "seed": seed, "n": n,
                                  "error_sd": float(sd), "noise_sd": noise_sd})


GENERATORS = {
    "full_rank": gen_full_rank,
    "knn": gen_knn_data,
    "measurement_error": gen_measurement_error,
}


# ----------------------------------------------------------------------
# csv


def load_csv(path, label: str, features: Optional[Sequence[str]] = None,
             task: str = "regression") -> Dataset:
    """Read a headed UTF-8 CSV; ``label`` names the response column.

    ``features`` selects and orders the input columns (default: all others).
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        if label not in header:
            raise InputError(f"{path}: label column {label!r} not in header")
        cols = [h for h in header if h != label] if features is None else list(features)
        missing = [c for c in cols if c not in header]
        if missing:
            raise InputError(f"{path}: columns {missing} not in header")
        idx = [header.index(c) for c in cols]
        li = header.index(label)
        rows, ys = [], []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not v.strip() for v in rec):
                continue
            if len(rec) != len(header):
                raise InputError(f"{path}:{lineno}: expected {len(header)} fields, got {len(rec)}")
            try:
                rows.append([float(rec[i]) for i in idx])
                ys.append(float(rec[li]))
            except ValueError as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise InputError(f"{path}: no data rows")
    X = np.array(rows)
    y = np.array(ys)
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        bad = int(np.flatnonzero(~np.isfinite(X).all(axis=1) | ~np.isfinite(y))[0]) + 2
        raise InputError(f"{path}:{bad}: non-finite value")
    if task == "binary_classification" and not np.all((y == 0) | (y == 1)):
        raise InputError(f"{path}: label column {label!r} is not binary 0/1")
    return Dataset(X, y, tuple(cols), task=task, meta={"source": str(path)})


def save_csv(path, ds: Dataset, label: str = "y") -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*ds.feature_names, label])
        for row, target in zip(ds.X, ds.y):
            w.writerow([repr(float(v)) for v in row] + [repr(float(target))])
    return path


# ----------------------------------------------------------------------
# splitting and scaling


def split_indices(n: int, seed: int = 0, fraction: Optional[float] = None,
                  k_folds: Optional[int] = None) -> list[tuple[np.ndarray, np.ndarray]]:
    """Train/test index pairs from a seeded permutation.

    ``fraction`` gives the training share of a single split; ``k_folds``
    gives k pairs whose test parts partition ``range(n)``.
    """
    if (fraction is None) == (k_folds is None):
        raise InputError("give exactly one of fraction or k_folds")
    perm = np.random.default_rng(seed).permutation(n)
    if fraction is not None:
        if not 0.0 < fraction < 1.0:
            raise InputError(f"fraction must be in (0, 1), got {fraction}")
        cut = int(round(fraction * n))
        return [(np.sort(perm[:cut]), np.sort(perm[cut:]))]
    if not 2 <= k_folds <= n:
        raise InputError(f"k_folds must be in [2, n], got {k_folds}")
    folds = np.array_split(perm, k_folds)
    out = []
    for k in range(k_folds):
        test = np.sort(folds[k])
        train = np.sort(np.concatenate([folds[j] for j in range(k_folds) if j != k]))
        out.append((train, test))
    return out


def split(ds: Dataset, seed: int = 0, fraction: Optional[float] = None,
          k_folds: Optional[int] = None) -> list[tuple[Dataset, Dataset]]:
    return [(ds.subset(tr), ds.subset(te))
            for tr, te in split_indices(ds.n, seed, fraction, k_folds)]


def fit_standardization(X) -> Standardization:
    X = np.asarray(X, dtype=np.float64)
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    return Standardization(mean, scale)


def standardize(ds: Dataset, record: Optional[Standardization] = None) -> Dataset:
    """Scale the inputs with ``record`` (fitted on ``ds`` when omitted)."""
    if ds.standardization is not None:
        raise InputError("dataset is already standardized")
    rec = fit_standardization(ds.X) if record is None else record
    return replace(ds, X=rec.apply(ds.X), standardization=rec, meta=dict(ds.meta))


def unstandardize(ds: Dataset) -> Dataset:
    if ds.standardization is None:
        return ds
    return replace(ds, X=ds.standardization.invert(ds.X), standardization=None,
                   meta=dict(ds.meta))


# ----------------------------------------------------------------------
# binary cache


def save_dataset(path, ds: Dataset) -> Path:
    path = Path(path)
    header = {"format": CACHE_TAG, "feature_names": list(ds.feature_names), "task": ds.task,
              "meta": ds.meta, "standardized": ds.standardization is not None}
    arrays = {"X": ds.X, "y": ds.y,
              "header": np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)}
    if ds.standardization is not None:
        arrays["std_mean"] = ds.standardization.mean
        arrays["std_scale"] = ds.standardization.scale
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_dataset(path) -> Dataset:
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(bytes(data["header"]).decode())
        if header.get("format") != CACHE_TAG:
            raise InputError(f"{path}: not a dataset cache")
        rec = Standardization(data["std_mean"], data["std_scale"]) if header["standardized"] else None
        return Dataset(data["X"], data["y"], tuple(header["feature_names"]), rec,
                       header["task"], header["meta"])
