"""K-StoNet model container, deterministic forward pass and noise densities."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from .errors import ConfigError, InputError
from .kernel import rbf_matrix
from .svr import SvrModel

FORMAT_TAG = "kstonet-model/1"


class Activation(str, enum.Enum):
    TANH = "tanh"
    SOFTPLUS = "softplus"
    SIGMOID = "sigmoid"
    IDENTITY = "identity"

    def __call__(self, x):
        if self is Activation.IDENTITY:
            return np.asarray(x, dtype=np.float64)
        if self is Activation.TANH:
            return np.tanh(x)
        if self is Activation.SOFTPLUS:
            return np.logaddexp(0.0, x)
        return expit(x)

    def deriv(self, x):
        if self is Activation.IDENTITY:
            return np.ones_like(np.asarray(x, dtype=np.float64))
        if self is Activation.TANH:
            t = np.tanh(x)
            return 1.0 - t * t
        if self is Activation.SOFTPLUS:
            return expit(x)
        s = expit(x)
        return s * (1.0 - s)


class Task(str, enum.Enum):
    REGRESSION = "regression"
    BINARY = "binary_classification"


@dataclass(frozen=True)
class NetConfig:
    """Architecture and noise scales.

    ``sigma_sq`` lists the Gaussian noise variances of layers 2..h+1; for a
    binary output its last entry acts as the likelihood temperature.
    ``c_noise`` and ``eps_noise`` parametrise the first-layer noise density.
    """

    hidden_widths: tuple[int, ...] = (5,)
    output_dim: int = 1
    activation: Activation = Activation.TANH
    task: Task = Task.REGRESSION
    c_noise: float = 10.0
    eps_noise: float = 0.01
    sigma_sq: tuple[float, ...] = (0.01,)
    tempered_output: bool = True
    strict_pyramid: bool = False

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(m) for m in self.hidden_widths))
        object.__setattr__(self, "sigma_sq", tuple(float(s) for s in self.sigma_sq))
        object.__setattr__(self, "activation", Activation(self.activation))
        object.__setattr__(self, "task", Task(self.task))
        if not self.hidden_widths or any(m < 1 for m in self.hidden_widths):
            raise ConfigError(f"hidden widths must be positive, got {self.hidden_widths}")
        if self.output_dim != 1:
            raise ConfigError("only a single output unit is supported")
        if len(self.sigma_sq) != self.depth:
            raise ConfigError(
                f"sigma_sq needs {self.depth} entries (layers 2..h+1), got {len(self.sigma_sq)}")
        if any(not s > 0 for s in self.sigma_sq):
            raise ConfigError("every sigma_sq must be positive")
        if not self.c_noise > 0 or not self.eps_noise >= 0:
            raise ConfigError("c_noise must be positive and eps_noise nonnegative")
        if self.strict_pyramid:
            widths = self.hidden_widths + (self.output_dim,)
            if any(a < b for a, b in zip(widths, widths[1:])):
                raise ConfigError(f"widths {widths} are not pyramidal")

    @property
    def depth(self) -> int:
        """Number of hidden layers h."""
        return len(self.hidden_widths)

    @property
    def widths(self) -> tuple[int, ...]:
        """m_1..m_{h+1}."""
        return self.hidden_widths + (self.output_dim,)


@dataclass(frozen=True)
class DenseLayer:
    """Affine map ``b + W psi(prev)`` plus statistics of the fit that produced it.

    ``residual_variance`` and ``design_gram`` (the intercept-augmented
    ``[psi(Y), 1]' [psi(Y), 1]`` of the imputed inputs) feed the
    covariance propagation; they are absent for hand-built layers.
    """

    weight: np.ndarray
    bias: np.ndarray
    residual_variance: Optional[np.ndarray] = None
    design_gram: Optional[np.ndarray] = None

    def __post_init__(self):
        w = np.atleast_2d(np.asarray(self.weight, dtype=np.float64))
        b = np.atleast_1d(np.asarray(self.bias, dtype=np.float64))
        if b.shape != (w.shape[0],):
            raise InputError(f"bias of shape {b.shape} does not match weight {w.shape}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise InputError("dense layer parameters must be finite")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)


@dataclass(frozen=True)
class KStoNetModel:
    svr_layer: tuple[SvrModel, ...]
    dense_layers: tuple[DenseLayer, ...]
    config: NetConfig
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "svr_layer", tuple(self.svr_layer))
        object.__setattr__(self, "dense_layers", tuple(self.dense_layers))
        cfg = self.config
        if len(self.svr_layer) != cfg.hidden_widths[0]:
            raise InputError(
                f"{len(self.svr_layer)} SVR units for a first layer of width {cfg.hidden_widths[0]}")
        if len(self.dense_layers) != cfg.depth:
            raise InputError(f"expected {cfg.depth} dense layers, got {len(self.dense_layers)}")
        widths = cfg.widths
        for i, layer in enumerate(self.dense_layers):
            expect = (widths[i + 1], widths[i])
            if layer.weight.shape != expect:
                raise InputError(f"dense layer {i + 2} has shape {layer.weight.shape}, expected {expect}")
        dims = {u.train_X.shape[1] for u in self.svr_layer}
        if len(dims) != 1:
            raise InputError("SVR units disagree on input dimension")

    @property
    def input_dim(self) -> int:
        return self.svr_layer[0].train_X.shape[1]

    def with_dense(self, dense_layers: Sequence[DenseLayer]) -> "KStoNetModel":
        return replace(self, dense_layers=tuple(dense_layers))


def first_layer_matrix(model: KStoNetModel) -> tuple[np.ndarray, np.ndarray]:
    """Stack the SVR units into an (n, m_1) dual-coefficient matrix and bias vector."""
    coefs = np.column_stack([u.dual_coefs for u in model.svr_layer])
    bias = np.array([u.bias for u in model.svr_layer])
    return coefs, bias


def svr_outputs(model: KStoNetModel, X: np.ndarray, grams: Optional[dict] = None) -> np.ndarray:
    """First-layer means for every row of ``X``; ``grams`` maps gamma to K(X, train_X)."""
    units = model.svr_layer
    out = np.empty((X.shape[0], len(units)))
    by_gamma: dict[float, list[int]] = {}
    for k, u in enumerate(units):
        by_gamma.setdefault(u.gamma, []).append(k)
    for gamma, ks in by_gamma.items():
        train_X = units[ks[0]].train_X
        shared = all(units[k].train_X is train_X for k in ks)
        if grams is not None and gamma in grams and shared:
            K = grams[gamma]
            coefs = np.column_stack([units[k].dual_coefs for k in ks])
            out[:, ks] = K @ coefs
        elif shared:
            sv = np.unique(np.concatenate([units[k].support_ids for k in ks]))
            coefs = np.column_stack([units[k].dual_coefs[sv] for k in ks])
            out[:, ks] = rbf_matrix(X, train_X[sv], gamma) @ coefs if sv.size else 0.0
        else:
            for k in ks:
                u = units[k]
                sv = u.support_ids
                out[:, k] = rbf_matrix(X, u.train_X[sv], gamma) @ u.dual_coefs[sv] if sv.size else 0.0
        for k in ks:
            out[:, k] += units[k].bias
    return out


def rowwise_affine(A: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``b + A @ W.T`` computed row by row so results do not depend on batch size."""
    return b + (A[:, None, :] * W[None, :, :]).sum(axis=-1)


def forward(model: KStoNetModel, x, grams: Optional[dict] = None) -> list[np.ndarray]:
    """Noise-free layer outputs Z_1..Z_{h+1}.

    A 1-D ``x`` yields 1-D layer vectors; a 2-D batch yields one row per
    sample.  For a binary task the last output is the logit.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise InputError(f"input dimension {X.shape[-1]} does not match model ({model.input_dim})")
    psi = model.config.activation
    Z = svr_outputs(model, X, grams)
    outs = [Z]
    for layer in model.dense_layers:
        Z = rowwise_affine(psi(Z), layer.weight, layer.bias)
        outs.append(Z)
    if single:
        return [z[0] for z in outs]
    return outs


def predict_output(model: KStoNetModel, X, grams: Optional[dict] = None) -> np.ndarray:
    """Single-snapshot output vector (regression mean or logit), one entry per row."""
    return forward(model, np.atleast_2d(X), grams)[-1][:, 0]


# ----------------------------------------------------------------------
# first-layer noise density


@dataclass(frozen=True)
class NoiseDensity:
    """Density ``C / (2(1 + C eps)) * exp(-C |x|_eps)``."""

    c: float
    eps: float

    def __post_init__(self):
        if not self.c > 0 or not self.eps >= 0:
            raise ConfigError("NoiseDensity needs c > 0 and eps >= 0")

    @property
    def log_norm(self) -> float:
        return float(np.log(self.c) - np.log(2.0 * (1.0 + self.c * self.eps)))

    @property
    def variance(self) -> float:
        c, e = self.c, self.eps
        return 2.0 / c**2 + e**2 * (e * c + 3.0) / (3.0 * (e * c + 1.0))


def noise_logpdf(d: NoiseDensity, r):
    r = np.asarray(r, dtype=np.float64)
    return d.log_norm - d.c * np.maximum(0.0, np.abs(r) - d.eps)


def noise_score(d: NoiseDensity, r):
    """Derivative of ``noise_logpdf`` in ``r``; zero on the closed tube."""
    r = np.asarray(r, dtype=np.float64)
    return np.where(np.abs(r) > d.eps, -d.c * np.sign(r), 0.0)


# ----------------------------------------------------------------------
# serialization


def _config_to_dict(cfg: NetConfig) -> dict:
    return {
        "hidden_widths": list(cfg.hidden_widths),
        "output_dim": cfg.output_dim,
        "activation": cfg.activation.value,
        "task": cfg.task.value,
        "c_noise": cfg.c_noise,
        "eps_noise": cfg.eps_noise,
        "sigma_sq": list(cfg.sigma_sq),
        "tempered_output": cfg.tempered_output,
        "strict_pyramid": cfg.strict_pyramid,
    }


def config_from_dict(d: dict) -> NetConfig:
    return NetConfig(**{**d, "hidden_widths": tuple(d["hidden_widths"]),
                        "sigma_sq": tuple(d["sigma_sq"])})


def save_models(path, models: Sequence[KStoNetModel]) -> Path:
    """Write snapshots to one ``.npz`` file with an embedded JSON header.

    Training inputs shared between units and snapshots are stored once.
    """
    path = Path(path)
    arrays: dict[str, np.ndarray] = {}
    inputs: list[np.ndarray] = []

    def input_index(X):
        for k, seen in enumerate(inputs):
            if seen is X or (seen.shape == X.shape and np.array_equal(seen, X)):
                return k
        inputs.append(X)
        arrays[f"input_{len(inputs) - 1}"] = X
        return len(inputs) - 1

    header = {"format": FORMAT_TAG, "snapshots": []}
    for s, m in enumerate(models):
        snap = {"config": _config_to_dict(m.config), "meta": m.meta, "svr": [], "dense": []}
        for k, u in enumerate(m.svr_layer):
            arrays[f"s{s}_svr{k}_dual"] = u.dual_coefs
            snap["svr"].append({"bias": float(u.bias), "gamma": u.gamma, "box": u.box,
                                "epsilon": u.epsilon, "input": input_index(u.train_X),
                                "iterations": int(u.iterations)})
        for i, layer in enumerate(m.dense_layers):
            arrays[f"s{s}_dense{i}_w"] = layer.weight
            arrays[f"s{s}_dense{i}_b"] = layer.bias
            entry = {"stats": layer.residual_variance is not None}
            if entry["stats"]:
                arrays[f"s{s}_dense{i}_rv"] = layer.residual_variance
                arrays[f"s{s}_dense{i}_gram"] = layer.design_gram
            snap["dense"].append(entry)
        header["snapshots"].append(snap)
    arrays["header"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_models(path) -> list[KStoNetModel]:
    from .svr import MARGINAL_SHRINK

    with np.load(path, allow_pickle=False) as data:
        header = json.loads(bytes(data["header"]).decode())
        if header.get("format") != FORMAT_TAG:
            raise InputError(f"{path}: unknown model format {header.get('format')!r}")
        inputs: dict[int, np.ndarray] = {}
        models = []
        for s, snap in enumerate(header["snapshots"]):
            units = []
            for k, u in enumerate(snap["svr"]):
                idx = u["input"]
                if idx not in inputs:
                    inputs[idx] = data[f"input_{idx}"]
                beta = data[f"s{s}_svr{k}_dual"]
                absb = np.abs(beta)
                units.append(SvrModel(
                    beta, u["bias"], np.flatnonzero(absb > 0.0),
                    np.flatnonzero((absb > 0.0) & (absb < u["box"] * (1.0 - MARGINAL_SHRINK))),
                    inputs[idx], u["gamma"], u["box"], u["epsilon"], u["iterations"]))
            dense = []
            for i, entry in enumerate(snap["dense"]):
                rv = data[f"s{s}_dense{i}_rv"] if entry["stats"] else None
                dg = data[f"s{s}_dense{i}_gram"] if entry["stats"] else None
                dense.append(DenseLayer(data[f"s{s}_dense{i}_w"], data[f"s{s}_dense{i}_b"], rv, dg))
            models.append(KStoNetModel(tuple(units), tuple(dense),
                                       config_from_dict(snap["config"]), snap["meta"]))
    return models
