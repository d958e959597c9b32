"""Backward HMC imputation of the latent layer outputs.

Every sample owns an independent noise stream derived from
``(seed, epoch, sample index)``, so the result for a sample does not
depend on which other samples are processed with it or how the batch is
split across threads.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import expit

from .errors import ConfigError, DivergenceError, InputError
from .model import KStoNetModel, NoiseDensity, Task, forward, noise_logpdf, noise_score, rowwise_affine

DIVERGENCE_LIMIT = 1e8


@dataclass(frozen=True)
class HmcConfig:
    """Sampler settings.

    ``lr`` is either one step size shared by all latent layers or a tuple
    with one entry per hidden layer.  ``alpha`` is the momentum refresh
    rate; the velocity is multiplied by ``1 - alpha`` each step, and
    ``alpha = 1`` gives Langevin dynamics.  ``lr_schedule`` optionally maps
    the epoch index to a multiplier of ``lr``.
    """

    steps: int = 25
    lr: float | tuple[float, ...] = 5e-4
    alpha: float = 0.1
    seed: int = 0
    lr_schedule: Optional[Callable[[int], float]] = None

    def __post_init__(self):
        lr = self.lr if isinstance(self.lr, (tuple, list)) else (self.lr,)
        object.__setattr__(self, "lr", tuple(float(v) for v in lr) if len(lr) > 1 else float(lr[0]))
        if self.steps < 1:
            raise ConfigError("HMC needs at least one step")
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in (0, 1], got {self.alpha}")
        if any(v < 0 for v in np.atleast_1d(self.lr)):
            raise ConfigError("learning rates must be nonnegative")

    def layer_lr(self, depth: int, epoch: int = 0) -> np.ndarray:
        lr = np.atleast_1d(np.asarray(self.lr, dtype=np.float64))
        if lr.size == 1:
            lr = np.repeat(lr, depth)
        if lr.size != depth:
            raise ConfigError(f"{lr.size} learning rates for {depth} latent layers")
        if self.lr_schedule is not None:
            lr = lr * float(self.lr_schedule(epoch))
        return lr


@dataclass
class LatentState:
    """Latent outputs ``Y[i]`` (n, m_{i+1}) and their velocity buffers."""

    Y: list[np.ndarray]
    V: list[np.ndarray]

    @property
    def n(self) -> int:
        return self.Y[0].shape[0]

    def copy(self) -> "LatentState":
        return LatentState([y.copy() for y in self.Y], [v.copy() for v in self.V])

    def take(self, rows) -> "LatentState":
        return LatentState([y[rows] for y in self.Y], [v[rows] for v in self.V])


def _batch(X, y):
    X = np.asarray(X, dtype=np.float64)
    X = X[None, :] if X.ndim == 1 else X
    y = np.atleast_1d(np.asarray(y, dtype=np.float64)).reshape(-1)
    if y.shape[0] != X.shape[0]:
        raise InputError(f"{X.shape[0]} inputs but {y.shape[0]} responses")
    return X, y


def init_latent(model: KStoNetModel, x, svr_mean: Optional[np.ndarray] = None) -> LatentState:
    """Noise-free forward values for every hidden layer, zero velocities."""
    if svr_mean is None:
        X = np.asarray(x, dtype=np.float64)
        outs = forward(model, X[None, :] if X.ndim == 1 else X)
    else:
        outs = _forward_from_first(model, svr_mean)
    Y = [z.copy() for z in outs[:-1]]
    return LatentState(Y, [np.zeros_like(z) for z in Y])


def _forward_from_first(model: KStoNetModel, Z1: np.ndarray) -> list[np.ndarray]:
    psi = model.config.activation
    outs = [np.array(Z1, dtype=np.float64)]
    for layer in model.dense_layers:
        outs.append(rowwise_affine(psi(outs[-1]), layer.weight, layer.bias))
    return outs


class _Conditional:
    """Log-density pieces of the latent chain for a fixed model and batch."""

    def __init__(self, model: KStoNetModel, X: np.ndarray, y: np.ndarray,
                 svr_mean: Optional[np.ndarray] = None):
        self.model = model
        cfg = model.config
        self.cfg = cfg
        self.psi = cfg.activation
        self.h = cfg.depth
        self.y = y
        self.noise = NoiseDensity(cfg.c_noise, cfg.eps_noise)
        self.svr_mean = forward(model, X)[0] if svr_mean is None else svr_mean
        self.classify = cfg.task is Task.BINARY

    def _out_scale(self) -> float:
        if self.classify and not self.cfg.tempered_output:
            return 1.0
        return 1.0 / self.cfg.sigma_sq[-1]

    def grad(self, Y: Sequence[np.ndarray], i: int) -> np.ndarray:
        """Gradient of the joint log-density in ``Y[i-1]`` (layer ``i``, 1-based)."""
        cfg = self.cfg
        dense = self.model.dense_layers
        Yi = Y[i - 1]
        if i == 1:
            own = noise_score(self.noise, Yi - self.svr_mean)
        else:
            lay = dense[i - 2]
            mu = rowwise_affine(self.psi(Y[i - 2]), lay.weight, lay.bias)
            own = -(Yi - mu) / cfg.sigma_sq[i - 2]
        nxt = dense[i - 1]
        eta = rowwise_affine(self.psi(Yi), nxt.weight, nxt.bias)
        if i == self.h:
            target = self.y[:, None]
            resid = target - expit(eta) if self.classify else target - eta
            scale = self._out_scale() if self.classify else 1.0 / cfg.sigma_sq[-1]
        else:
            resid = Y[i] - eta
            scale = 1.0 / cfg.sigma_sq[i - 1]
        back = (resid[:, :, None] * nxt.weight[None, :, :]).sum(axis=1)
        return scale * back * self.psi.deriv(Yi) + own

    def log_joint(self, Y: Sequence[np.ndarray]) -> np.ndarray:
        cfg = self.cfg
        dense = self.model.dense_layers
        total = noise_logpdf(self.noise, Y[0] - self.svr_mean).sum(axis=1)
        for i in range(2, self.h + 1):
            lay = dense[i - 2]
            mu = rowwise_affine(self.psi(Y[i - 2]), lay.weight, lay.bias)
            s2 = cfg.sigma_sq[i - 2]
            total = total - ((Y[i - 1] - mu) ** 2).sum(axis=1) / (2 * s2) \
                - 0.5 * mu.shape[1] * np.log(2 * np.pi * s2)
        out = dense[-1]
        eta = rowwise_affine(self.psi(Y[-1]), out.weight, out.bias)[:, 0]
        if self.classify:
            total = total + self._out_scale() * (self.y * eta - np.logaddexp(0.0, eta))
        else:
            s2 = cfg.sigma_sq[-1]
            total = total - (self.y - eta) ** 2 / (2 * s2) - 0.5 * np.log(2 * np.pi * s2)
        return total


def latent_grad(model: KStoNetModel, x, y, state: LatentState, layer: int,
                svr_mean: Optional[np.ndarray] = None) -> np.ndarray:
    """Drift of the sampler for latent layer ``layer`` (1..h)."""
    X, y = _batch(x, y)
    if not 1 <= layer <= model.config.depth:
        raise InputError(f"layer must be in 1..{model.config.depth}, got {layer}")
    return _Conditional(model, X, y, svr_mean).grad(state.Y, layer)


def log_joint(model: KStoNetModel, x, y, state: LatentState,
              svr_mean: Optional[np.ndarray] = None) -> np.ndarray:
    """Per-sample complete-data log-density log pi(y, Y_1..Y_h | x)."""
    X, y = _batch(x, y)
    return _Conditional(model, X, y, svr_mean).log_joint(state.Y)


def draw_noise(seed: int, epoch: int, sample_ids: Sequence[int], total_width: int,
               steps: int) -> np.ndarray:
    """Standard normal draws of shape (n, steps, total_width), one stream per sample."""
    out = np.empty((len(sample_ids), steps, total_width))
    for row, sid in enumerate(sample_ids):
        ss = np.random.SeedSequence(int(seed), spawn_key=(int(epoch), int(sid)))
        out[row] = np.random.default_rng(ss).standard_normal((steps, total_width))
    return out


def hmc_impute(model: KStoNetModel, x, y, state: LatentState, cfg: HmcConfig,
               noise: Optional[np.ndarray] = None, epoch: int = 0,
               sample_ids: Optional[Sequence[int]] = None,
               svr_mean: Optional[np.ndarray] = None) -> LatentState:
    """Run ``cfg.steps`` sweeps over layers h..1 and return the final state.

    ``noise`` may supply the standard normal draws directly; otherwise they
    come from the per-sample streams of ``sample_ids`` (default 0..n-1).
    """
    X, y = _batch(x, y)
    cond = _Conditional(model, X, y, svr_mean)
    h = model.config.depth
    widths = model.config.hidden_widths
    offsets = np.concatenate([[0], np.cumsum(widths)])
    n = X.shape[0]
    if sample_ids is None:
        sample_ids = np.arange(n)
    if noise is None:
        noise = draw_noise(cfg.seed, epoch, sample_ids, int(offsets[-1]), cfg.steps)
    lr = cfg.layer_lr(h, epoch)
    keep = 1.0 - cfg.alpha
    state = state.copy()
    Y, V = state.Y, state.V
    for k in range(cfg.steps):
        for i in range(h, 0, -1):
            g = cond.grad(Y, i)
            z = noise[:, k, offsets[i - 1]:offsets[i]]
            V[i - 1] = keep * V[i - 1] + lr[i - 1] * g + np.sqrt(2.0 * cfg.alpha * lr[i - 1]) * z
            Y[i - 1] = Y[i - 1] + V[i - 1]
            bad = ~np.isfinite(Y[i - 1]) | (np.abs(Y[i - 1]) > DIVERGENCE_LIMIT)
            if bad.any():
                row = int(np.flatnonzero(bad.any(axis=1))[0])
                mag = float(np.max(np.abs(Y[i - 1][row])))
                raise DivergenceError(
                    f"latent layer {i} diverged at step {k + 1} for sample {int(sample_ids[row])} "
                    f"(|Y| = {mag:.3g})", layer=i, step=k + 1, magnitude=mag,
                    sample=int(sample_ids[row]))
    return state


def impute_all(model: KStoNetModel, X, y, cfg: HmcConfig, epoch: int = 0, threads: int = 1,
               svr_mean: Optional[np.ndarray] = None,
               sample_ids: Optional[Sequence[int]] = None) -> LatentState:
    """Initialise from the forward pass and impute every sample.

    ``threads > 1`` splits the samples into contiguous chunks processed
    concurrently; the output is identical to the serial run.
    """
    X, y = _batch(X, y)
    n = X.shape[0]
    if n == 0:
        raise InputError("impute_all needs at least one sample")
    if sample_ids is None:
        sample_ids = np.arange(n)
    sample_ids = np.asarray(sample_ids)
    if svr_mean is None:
        svr_mean = forward(model, X)[0]
    state = init_latent(model, X, svr_mean=svr_mean)
    if threads <= 1 or n < 2 * threads:
        return hmc_impute(model, X, y, state, cfg, epoch=epoch, sample_ids=sample_ids,
                          svr_mean=svr_mean)
    chunks = np.array_split(np.arange(n), threads)

    def run(rows):
        return hmc_impute(model, X[rows], y[rows], state.take(rows), cfg, epoch=epoch,
                          sample_ids=sample_ids[rows], svr_mean=svr_mean[rows])

    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(run, chunks))
    return LatentState([np.concatenate([p.Y[i] for p in parts]) for i in range(len(state.Y))],
                       [np.concatenate([p.V[i] for p in parts]) for i in range(len(state.V))])
