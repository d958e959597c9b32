"""Prediction uncertainty: SVR posterior variance, layer-wise covariance
propagation and Gaussian prediction intervals."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.linalg
from scipy.special import ndtri

from .errors import InputError, UnsupportedTaskError
from .model import Activation, DenseLayer, KStoNetModel, Task, forward
from .svr import _jittered_cholesky, svr_variance

INTERVAL_HEADER = ("point_id", "center", "lower", "upper", "level")


@dataclass(frozen=True)
class CovarianceEstimate:
    """Forward means ``means[i]`` (N, m_{i+1}) and covariances ``covs[i]`` (N, m, m)."""

    means: list[np.ndarray]
    covs: list[np.ndarray]


@dataclass(frozen=True)
class PredictionInterval:
    """Interval ``center +- half_width``; fields are arrays for a batch of points.

    ``variance_components`` holds the residual term and the propagated
    output-covariance term (averaged over snapshots).
    """

    center: np.ndarray
    half_width: np.ndarray
    level: float
    variance_components: tuple[np.ndarray, np.ndarray]

    @property
    def lower(self):
        return self.center - self.half_width

    @property
    def upper(self):
        return self.center + self.half_width


def _points(z) -> tuple[np.ndarray, bool]:
    z = np.asarray(z, dtype=np.float64)
    return (z[None, :], True) if z.ndim == 1 else (z, False)


def first_layer_var(model: KStoNetModel, Z) -> np.ndarray:
    """(N, m_1) SVR posterior variances of every unit."""
    Z, _ = _points(Z)
    return np.column_stack([np.atleast_1d(svr_variance(u, Z)) for u in model.svr_layer])


def first_layer_cov(model: KStoNetModel, z) -> np.ndarray:
    """Diagonal first-layer covariance; (m_1, m_1) for one point, (N, m_1, m_1) for a batch."""
    Z, single = _points(z)
    v = first_layer_var(model, Z)
    cov = np.einsum("nj,jk->njk", v, np.eye(v.shape[1]))
    return cov[0] if single else cov


def inverse_design_gram(layer: DenseLayer) -> np.ndarray:
    """Inverse of the intercept-augmented design Gram via a jittered Cholesky factor."""
    if layer.design_gram is None:
        raise InputError("dense layer carries no design statistics; refit it with the trainer")
    G = np.asarray(layer.design_gram, dtype=np.float64)
    chol = _jittered_cholesky(G)
    return scipy.linalg.cho_solve(chol, np.eye(G.shape[0]), check_finite=False)


def propagate_cov(layer: DenseLayer, z_prev, cov_prev, activation: Activation,
                  ginv: Optional[np.ndarray] = None,
                  residual_variance: Optional[np.ndarray] = None) -> np.ndarray:
    """One step of the covariance recursion through a dense layer.

    ``z_prev`` is the forward value of the previous layer (its mean
    estimate) and ``cov_prev`` its covariance; both may be batched over a
    leading axis.  The estimation-error term scales ``diag(sigma^2)`` by
    ``tr(G^-1 pad(D S D)) + psi~' G^-1 psi~`` with ``psi~ = [psi(z), 1]``;
    the propagated term is ``W D S D W'``.
    """
    z = np.asarray(z_prev, dtype=np.float64)
    S = np.asarray(cov_prev, dtype=np.float64)
    single = z.ndim == 1
    if single:
        z, S = z[None, :], S[None, :, :]
    if ginv is None:
        ginv = inverse_design_gram(layer)
    rv = layer.residual_variance if residual_variance is None else residual_variance
    rv = np.asarray(rv, dtype=np.float64)
    m = z.shape[1]
    d = activation.deriv(z)
    DSD = d[:, :, None] * S * d[:, None, :]
    trace = np.einsum("jk,nkj->n", ginv[:m, :m], DSD)
    pt = np.column_stack([activation(z), np.ones(z.shape[0])])
    quad = np.einsum("nj,jk,nk->n", pt, ginv, pt)
    W = layer.weight
    out = (trace + quad)[:, None, None] * np.diag(rv)[None] + np.einsum("aj,njk,bk->nab", W, DSD, W)
    out = 0.5 * (out + np.swapaxes(out, 1, 2))
    return out[0] if single else out


def propagate_all(model: KStoNetModel, z) -> CovarianceEstimate:
    """Forward means and covariances of every layer at the points ``z``."""
    Z, _ = _points(z)
    means = forward(model, Z)
    covs = [first_layer_cov(model, Z)]
    psi = model.config.activation
    for i, layer in enumerate(model.dense_layers):
        covs.append(propagate_cov(layer, means[i], covs[-1], psi))
    return CovarianceEstimate(means, covs)


def output_variance(model: KStoNetModel, z) -> np.ndarray:
    """(N,) propagated variance of the output unit."""
    return propagate_all(model, z).covs[-1][:, 0, 0]


def gaussian_quantile(level: float) -> float:
    """Two-sided standard normal critical value for coverage ``level``."""
    if not 0.0 <= level < 1.0:
        raise InputError(f"level must lie in [0, 1), got {level}")
    return float(ndtri(0.5 * (1.0 + level)))


def interval(models: Sequence[KStoNetModel], train_X, train_y, z, level: float = 0.95,
             average_last_k: int = 1, average: str = "endpoints") -> PredictionInterval:
    """Gaussian prediction interval for new responses at ``z``.

    Per snapshot the variance is the mean squared training residual plus
    the propagated output variance.  With ``average="endpoints"`` the lower
    and upper ends are averaged separately over the last k snapshots;
    ``"variance"`` averages centers and variances instead.
    """
    k = max(1, int(average_last_k))
    if len(models) < k:
        raise InputError(f"{len(models)} snapshots available, {k} requested")
    if any(m.config.task is not Task.REGRESSION for m in models[-k:]):
        raise UnsupportedTaskError("prediction intervals are implemented for regression only")
    if average not in ("endpoints", "variance"):
        raise InputError(f"unknown averaging {average!r}")
    Z, single = _points(z)
    train_X = np.atleast_2d(np.asarray(train_X, dtype=np.float64))
    train_y = np.asarray(train_y, dtype=np.float64).ravel()
    q = gaussian_quantile(level)
    lo = np.zeros(Z.shape[0])
    hi = np.zeros(Z.shape[0])
    centers = np.zeros(Z.shape[0])
    resid_terms = np.zeros(Z.shape[0])
    prop_terms = np.zeros(Z.shape[0])
    for m in models[-k:]:
        est = propagate_all(m, Z)
        c = est.means[-1][:, 0]
        resid = train_y - forward(m, train_X)[-1][:, 0]
        r = float(np.mean(resid**2))
        v = est.covs[-1][:, 0, 0]
        hw = q * np.sqrt(np.maximum(r + v, 0.0))
        lo += c - hw
        hi += c + hw
        centers += c
        resid_terms += r
        prop_terms += v
    lo, hi = lo / k, hi / k
    resid_terms, prop_terms = resid_terms / k, prop_terms / k
    if average == "endpoints":
        center = 0.5 * (lo + hi)
        half = 0.5 * (hi - lo)
    else:
        center = centers / k
        half = q * np.sqrt(resid_terms + prop_terms)
    if single:
        return PredictionInterval(float(center[0]), float(half[0]), level,
                                  (float(resid_terms[0]), float(prop_terms[0])))
    return PredictionInterval(center, half, level, (resid_terms, prop_terms))


def coverage(iv: PredictionInterval, y) -> np.ndarray:
    """0/1 indicators of ``y`` falling inside the closed interval."""
    y = np.asarray(y, dtype=np.float64)
    return ((y >= iv.lower) & (y <= iv.upper)).astype(np.float64)


def write_interval_csv(path, iv: PredictionInterval, point_ids=None) -> Path:
    path = Path(path)
    center = np.atleast_1d(iv.center)
    lower = np.atleast_1d(iv.lower)
    upper = np.atleast_1d(iv.upper)
    ids = range(center.size) if point_ids is None else point_ids
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(INTERVAL_HEADER)
        for pid, c, a, b in zip(ids, center, lower, upper):
            w.writerow([pid, repr(float(c)), repr(float(a)), repr(float(b)), repr(float(iv.level))])
    return path
