"""IRO training loop, snapshot averaging and an SGD multilayer-perceptron baseline."""

from __future__ import annotations

import csv
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .data import Dataset
from .errors import ConfigError, DivergenceError, InputError, KStoNetError
from .glm import FitResult, LassoConfig, lasso_fit, logistic_lasso_fit, ols_fit
from .imputation import HmcConfig, impute_all
from .kernel import KernelSpec, default_gamma, rbf_matrix
from .model import Activation, DenseLayer, KStoNetModel, NetConfig, Task, forward, rowwise_affine
from .svr import SvrConfig, SvrModel, svr_fit

TRACE_HEADER = ("epoch", "train_metric", "test_metric", "sv_count_mean", "seconds")
RING_THRESHOLD = 1000


@dataclass(frozen=True)
class TrainConfig:
    """IRO settings.

    ``lasso`` is one config shared by the dense layers or a tuple with one
    entry per layer 2..h+1; ``ols`` replaces the linear lasso fits by least
    squares.  ``kernel=None`` picks the bandwidth from the training inputs.
    """

    epochs: int = 40
    hmc: HmcConfig = HmcConfig()
    svr: SvrConfig = SvrConfig()
    kernel: Optional[KernelSpec] = None
    lasso: LassoConfig | tuple[LassoConfig, ...] = LassoConfig()
    ols: bool = False
    average_last_k: int = 1
    seed: int = 0
    threads: int = 1
    init_scale: float = 0.1
    keep_snapshots: Optional[int] = None

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be nonnegative")
        if self.average_last_k < 0 or self.average_last_k > max(self.epochs, 1):
            raise ConfigError(f"average_last_k={self.average_last_k} exceeds epochs={self.epochs}")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")

    def layer_lasso(self, depth: int) -> tuple[LassoConfig, ...]:
        if isinstance(self.lasso, LassoConfig):
            return (self.lasso,) * depth
        if len(self.lasso) != depth:
            raise ConfigError(f"{len(self.lasso)} lasso configs for {depth} dense layers")
        return tuple(self.lasso)


@dataclass(frozen=True)
class EpochTrace:
    epoch: int
    train_metric: float
    test_metric: float
    sv_counts: tuple[int, ...]
    seconds: float

    @property
    def sv_count_mean(self) -> float:
        return float(np.mean(self.sv_counts)) if self.sv_counts else 0.0


def _annotate(exc: KStoNetError, epoch: int, layer: int):
    exc.epoch = epoch
    exc.layer_index = layer
    if exc.args:
        exc.args = (f"epoch {epoch}, layer {layer}: {exc.args[0]}",) + exc.args[1:]
    return exc


def metric(task: Task, y, out) -> float:
    """MSE for regression, accuracy of ``out > 0`` for a binary task."""
    y = np.asarray(y, dtype=np.float64)
    out = np.asarray(out, dtype=np.float64)
    if task is Task.BINARY:
        return float(np.mean((out > 0).astype(float) == y))
    return float(np.mean((y - out) ** 2))


def _unit_grams(X, gammas) -> dict[float, np.ndarray]:
    return {g: rbf_matrix(X, X, g) for g in dict.fromkeys(gammas)}


def _fit_svr_units(X, targets, cfg: SvrConfig, gammas, grams, inits, threads):
    def fit(k):
        return svr_fit(X, targets[:, k], cfg, gammas[k], gram=grams[gammas[k]],
                       init=None if inits is None else inits[k])

    m = targets.shape[1]
    if threads > 1 and m > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return tuple(pool.map(fit, range(m)))
    return tuple(fit(k) for k in range(m))


def _design_gram(A: np.ndarray) -> np.ndarray:
    D = np.column_stack([A, np.ones(A.shape[0])])
    return D.T @ D


def _dense_from_fit(fit: FitResult, A: np.ndarray) -> DenseLayer:
    return DenseLayer(fit.weights, fit.bias, np.asarray(fit.residual_variance, dtype=np.float64),
                      _design_gram(A))


def initial_model(X: np.ndarray, net: NetConfig, cfg: TrainConfig, gammas=None,
                  grams=None) -> KStoNetModel:
    """Random starting network.

    Each SVR unit is fitted to a standardized random projection of the
    inputs, which gives distinct smooth first-layer features; dense weights
    are uniform on ``(-init_scale, init_scale)`` with zero biases.
    """
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(2**31,)))
    n, p = X.shape
    m1 = net.hidden_widths[0]
    if gammas is None:
        gammas = _gammas(X, net, cfg)
    if grams is None:
        grams = _unit_grams(X, gammas)
    proj = (X - X.mean(axis=0)) @ rng.standard_normal((p, m1))
    sd = proj.std(axis=0)
    proj = proj / np.where(sd > 0, sd, 1.0)
    units = _fit_svr_units(X, proj, cfg.svr, gammas, grams, None, cfg.threads)
    widths = net.widths
    dense = []
    for a, b in zip(widths, widths[1:]):
        dense.append(DenseLayer(rng.uniform(-cfg.init_scale, cfg.init_scale, size=(b, a)),
                                np.zeros(b)))
    return KStoNetModel(units, tuple(dense), net, {"epoch": 0})


def _gammas(X, net: NetConfig, cfg: TrainConfig) -> tuple[float, ...]:
    spec = cfg.kernel if cfg.kernel is not None else KernelSpec(default_gamma(X))
    return spec.unit_gammas(net.hidden_widths[0])


def _train_outputs(model: KStoNetModel, grams) -> list[np.ndarray]:
    X = model.svr_layer[0].train_X
    return forward(model, X, grams)


def iro_train(train: Dataset, net: NetConfig, cfg: TrainConfig, test: Optional[Dataset] = None,
              on_epoch: Optional[Callable[[int, KStoNetModel, EpochTrace], None]] = None,
              init: Optional[KStoNetModel] = None
              ) -> tuple[list[KStoNetModel], list[EpochTrace]]:
    """Alternate backward imputation and per-layer convex refits for ``cfg.epochs`` epochs.

    Returns the snapshots (the initial model first, then one per epoch,
    possibly truncated to a ring buffer) and one trace per epoch.
    """
    X, y = train.X, train.y
    if X.shape[0] < 2:
        raise InputError("training needs at least two samples")
    if net.task is Task.BINARY and train.task != "binary_classification":
        if not np.all((y == 0) | (y == 1)):
            raise InputError("binary task needs 0/1 labels")
    if test is not None and test.p != train.p:
        raise InputError(f"test data has {test.p} columns, training data {train.p}")
    gammas = _gammas(X, net, cfg) if init is None else tuple(u.gamma for u in init.svr_layer)
    grams = _unit_grams(X, gammas)
    model = init if init is not None else initial_model(X, net, cfg, gammas, grams)
    if init is not None:
        shared = model.svr_layer[0].train_X
        if shared.shape != X.shape or not np.array_equal(shared, X):
            raise InputError("init model was trained on different inputs")
    h = net.depth
    lassos = cfg.layer_lasso(h)
    psi = net.activation
    keep = cfg.keep_snapshots
    if keep is None and cfg.epochs > RING_THRESHOLD:
        keep = max(cfg.average_last_k, 1)
    models: deque | list = deque([model], maxlen=keep) if keep else [model]
    traces: list[EpochTrace] = []
    test_grams = None
    if test is not None:
        test_grams = {g: rbf_matrix(test.X, X, g) for g in grams}

    for t in range(1, cfg.epochs + 1):
        start = time.perf_counter()
        Z1 = forward(model, X, grams)[0]
        try:
            state = impute_all(model, X, y, cfg.hmc, epoch=t, threads=cfg.threads, svr_mean=Z1)
        except DivergenceError as exc:
            raise _annotate(exc, t, exc.layer) from None
        try:
            inits = [u.dual_coefs for u in model.svr_layer]
            units = _fit_svr_units(X, state.Y[0], cfg.svr, gammas, grams, inits, cfg.threads)
        except KStoNetError as exc:
            raise _annotate(exc, t, 1) from None
        dense = []
        for i in range(2, h + 2):
            A = psi(state.Y[i - 2])
            prev = model.dense_layers[i - 2]
            try:
                if i == h + 1 and net.task is Task.BINARY:
                    fit = logistic_lasso_fit(A, y, lassos[i - 2],
                                             init=(prev.weight[0], float(prev.bias[0])))
                elif i == h + 1:
                    fit = ols_fit(A, y) if cfg.ols else lasso_fit(A, y, lassos[i - 2],
                                                                  init=prev.weight)
                else:
                    target = state.Y[i - 1]
                    fit = ols_fit(A, target) if cfg.ols else lasso_fit(A, target, lassos[i - 2],
                                                                       init=prev.weight)
            except KStoNetError as exc:
                raise _annotate(exc, t, i) from None
            dense.append(_dense_from_fit(fit, A))
        model = KStoNetModel(units, tuple(dense), net, {"epoch": t})
        train_out = forward(model, X, grams)[-1][:, 0]
        test_metric = float("nan")
        if test is not None:
            test_metric = metric(net.task, test.y, forward(model, test.X, test_grams)[-1][:, 0])
        trace = EpochTrace(t, metric(net.task, y, train_out), test_metric,
                           tuple(u.n_support for u in units), time.perf_counter() - start)
        models.append(model)
        traces.append(trace)
        if on_epoch is not None:
            on_epoch(t, model, trace)
    return list(models), traces


def predict_mean(models: Sequence[KStoNetModel], X, average_last_k: int = 1,
                 grams: Optional[Sequence[dict]] = None) -> np.ndarray:
    """Average of the snapshot outputs (logits for a binary task) over the last k."""
    k = max(1, int(average_last_k))
    if len(models) < k:
        raise InputError(f"{len(models)} snapshots available, {k} requested")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    sel = list(models)[-k:]
    total = np.zeros(X.shape[0])
    for j, m in enumerate(sel):
        total += forward(m, X, None if grams is None else grams[j])[-1][:, 0]
    return total / k


def predict(models: Sequence[KStoNetModel], X, average_last_k: int = 1) -> np.ndarray:
    """Averaged regression prediction, or 0/1 labels from the averaged logit."""
    out = predict_mean(models, X, average_last_k)
    if models[-1].config.task is Task.BINARY:
        return (out > 0).astype(np.float64)
    return out


def write_trace_csv(path, traces: Sequence[EpochTrace], with_seconds: bool = True) -> Path:
    path = Path(path)
    header = TRACE_HEADER if with_seconds else TRACE_HEADER[:-1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for tr in traces:
            row = [tr.epoch, repr(tr.train_metric), repr(tr.test_metric), repr(tr.sv_count_mean)]
            if with_seconds:
                row.append(f"{tr.seconds:.6f}")
            w.writerow(row)
    return path


# ----------------------------------------------------------------------
# SGD baseline


@dataclass
class MlpModel:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: Activation = Activation.TANH

    def forward(self, X) -> np.ndarray:
        H = np.atleast_2d(np.asarray(X, dtype=np.float64))
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            H = self.activation(H @ W.T + b)
        return (H @ self.weights[-1].T + self.biases[-1])[:, 0]


def _mlp_grads(model: MlpModel, X, y):
    acts = [X]
    pre = []
    H = X
    for W, b in zip(model.weights[:-1], model.biases[:-1]):
        A = H @ W.T + b
        pre.append(A)
        H = model.activation(A)
        acts.append(H)
    out = (H @ model.weights[-1].T + model.biases[-1])[:, 0]
    r = out - y
    loss = float(np.mean(r**2))
    delta = (2.0 / X.shape[0]) * r[:, None]
    gW = [None] * len(model.weights)
    gb = [None] * len(model.biases)
    for li in range(len(model.weights) - 1, -1, -1):
        gW[li] = delta.T @ acts[li]
        gb[li] = delta.sum(axis=0)
        if li > 0:
            delta = (delta @ model.weights[li]) * model.activation.deriv(pre[li - 1])
    return loss, gW, gb


def sgd_mlp_train(train: Dataset, widths: Sequence[int], lr: float = 0.005, momentum: float = 0.0,
                  lasso_lambda: float = 0.0, epochs: int = 100, batch: int = 100, seed: int = 0,
                  test: Optional[Dataset] = None, activation: Activation = Activation.TANH,
                  init_model: Optional[MlpModel] = None) -> tuple[MlpModel, list[EpochTrace]]:
    """Minibatch SGD with heavy-ball momentum on the mean squared error.

    The optional L1 penalty adds ``lasso_lambda * sign(w)`` to the weight
    gradients (biases are not penalized).  Weights start uniform on
    ``(-1/sqrt(fan_in), 1/sqrt(fan_in))``.
    """
    X, y = train.X, train.y
    n, p = X.shape
    if lr < 0 or not 0.0 <= momentum < 1.0 or batch < 1:
        raise ConfigError("need lr >= 0, momentum in [0, 1) and batch >= 1")
    rng = np.random.default_rng(seed)
    dims = (p, *widths, 1)
    if init_model is None:
        model = MlpModel([rng.uniform(-1, 1, size=(b, a)) / np.sqrt(a) for a, b in zip(dims, dims[1:])],
                         [np.zeros(b) for b in dims[1:]], Activation(activation))
    else:
        model = MlpModel([w.copy() for w in init_model.weights],
                         [b.copy() for b in init_model.biases], init_model.activation)
    vW = [np.zeros_like(w) for w in model.weights]
    vb = [np.zeros_like(b) for b in model.biases]
    traces = []
    for ep in range(1, epochs + 1):
        start = time.perf_counter()
        order = rng.permutation(n)
        for s in range(0, n, batch):
            idx = order[s:s + batch]
            loss, gW, gb = _mlp_grads(model, X[idx], y[idx])
            if not np.isfinite(loss):
                raise DivergenceError(f"SGD loss became non-finite in epoch {ep}", step=ep)
            for li in range(len(model.weights)):
                g = gW[li] + lasso_lambda * np.sign(model.weights[li]) if lasso_lambda else gW[li]
                vW[li] = momentum * vW[li] - lr * g
                vb[li] = momentum * vb[li] - lr * gb[li]
                model.weights[li] = model.weights[li] + vW[li]
                model.biases[li] = model.biases[li] + vb[li]
        train_mse = float(np.mean((model.forward(X) - y) ** 2))
        if not np.isfinite(train_mse):
            raise DivergenceError(f"SGD diverged in epoch {ep}", step=ep)
        test_mse = float("nan") if test is None else float(np.mean((model.forward(test.X) - test.y) ** 2))
        traces.append(EpochTrace(ep, train_mse, test_mse, (), time.perf_counter() - start))
    return model, traces
