"""Epsilon-insensitive support vector regression.

The dual is solved by sequential minimal optimization over the usual
2n-variable form (``alpha`` for the upper tube side, ``alpha*`` for the
lower one).  Predictions use the kernel expansion over training points,
and the posterior variance uses the marginal support vectors only.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
import scipy.linalg
from numba import njit

from .errors import ConfigError, ConvergenceError, InputError, NumericalError
from .kernel import rbf_matrix

TAU = 1e-12
MARGINAL_SHRINK = 1e-3


class CostScaling(str, enum.Enum):
    TOTAL = "total"
    PER_SAMPLE = "per_sample"


@dataclass(frozen=True)
class SvrConfig:
    """Solver settings.

    With ``cost_scaling="total"`` the box bound of every dual variable is
    ``cost``, the convention of off-the-shelf SVR packages.  ``per_sample``
    divides it by the sample size instead.
    """

    cost: float = 10.0
    epsilon: float = 0.01
    kkt_tol: float = 1e-3
    max_iter: int = 10_000_000
    cost_scaling: CostScaling = CostScaling.TOTAL

    def __post_init__(self):
        object.__setattr__(self, "cost_scaling", CostScaling(self.cost_scaling))
        if not self.cost > 0:
            raise ConfigError(f"cost must be positive, got {self.cost}")
        if not self.epsilon >= 0:
            raise ConfigError(f"epsilon must be nonnegative, got {self.epsilon}")
        if not self.kkt_tol > 0:
            raise ConfigError(f"kkt_tol must be positive, got {self.kkt_tol}")
        if self.max_iter < 1:
            raise ConfigError("max_iter must be at least 1")

    def box(self, n: int) -> float:
        if self.cost_scaling is CostScaling.PER_SAMPLE:
            return self.cost / n
        return self.cost


@dataclass(frozen=True)
class SvrModel:
    dual_coefs: np.ndarray
    bias: float
    support_ids: np.ndarray
    marginal_ids: np.ndarray
    train_X: np.ndarray = field(repr=False)
    gamma: float
    box: float
    epsilon: float
    iterations: int = 0

    @property
    def n_support(self) -> int:
        return int(self.support_ids.size)

    @cached_property
    def _marginal_factor(self):
        idx = self.marginal_ids
        if idx.size == 0:
            return None
        Xm = self.train_X[idx]
        Kmm = rbf_matrix(Xm, Xm, self.gamma)
        return Xm, _jittered_cholesky(Kmm)


def _jittered_cholesky(A: np.ndarray, start: float = 1e-8, stop: float = 1e-4):
    """Cholesky factor of ``A + jitter*I``, escalating jitter by 10x up to ``stop``."""
    jitter = start
    eye = np.eye(A.shape[0])
    while jitter <= stop * (1 + 1e-9):
        try:
            return scipy.linalg.cho_factor(A + jitter * eye, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise NumericalError(f"matrix of size {A.shape[0]} not positive definite even with jitter {stop:g}")


@njit(cache=True, nogil=True)
def _smo(K, y, box, eps, tol, max_iter, beta0, Kbeta0, obj_trace):
    """Solve min 0.5 a'Qa + p'a, s'a = 0, 0 <= a <= box over 2n variables.

    Variable t < n is alpha_t (sign +1); t >= n is alpha*_{t-n} (sign -1).
    Returns (alpha, G, iterations, violation).  ``obj_trace`` receives the
    dual objective after each iteration when it has nonzero length.
    """
    n = y.shape[0]
    ln = 2 * n
    a = np.zeros(ln)
    G = np.empty(ln)
    s = np.empty(ln)
    for r in range(n):
        s[r] = 1.0
        s[r + n] = -1.0
        if beta0[r] > 0.0:
            a[r] = beta0[r]
        elif beta0[r] < 0.0:
            a[r + n] = -beta0[r]
        G[r] = Kbeta0[r] + eps - y[r]
        G[r + n] = -Kbeta0[r] + eps + y[r]
    ntrace = obj_trace.shape[0]
    it = 0
    violation = np.inf
    while it < max_iter:
        # working-set selection: i maximal violator, j by second-order gain
        gmax = -np.inf
        i = -1
        for r in range(n):
            if a[r] < box and -G[r] >= gmax:
                gmax = -G[r]
                i = r
            if a[r + n] > 0.0 and G[r + n] >= gmax:
                gmax = G[r + n]
                i = r + n
        gmax2 = -np.inf
        j = -1
        best = np.inf
        if i >= 0:
            ii = i % n
            Kii = K[ii, ii]
            for r in range(n):
                if a[r] > 0.0:
                    g = G[r]
                    if g >= gmax2:
                        gmax2 = g
                    diff = gmax + g
                    if diff > 0.0:
                        quad = Kii + K[r, r] - 2.0 * K[ii, r]
                        if quad <= 0.0:
                            quad = TAU
                        gain = -(diff * diff) / quad
                        if gain <= best:
                            best = gain
                            j = r
                if a[r + n] < box:
                    g = -G[r + n]
                    if g >= gmax2:
                        gmax2 = g
                    diff = gmax + g
                    if diff > 0.0:
                        quad = Kii + K[r, r] - 2.0 * K[ii, r]
                        if quad <= 0.0:
                            quad = TAU
                        gain = -(diff * diff) / quad
                        if gain <= best:
                            best = gain
                            j = r + n
        violation = gmax + gmax2
        if i < 0 or j < 0 or violation < tol:
            break

        ii = i % n
        jj = j % n
        Qij = s[i] * s[j] * K[ii, jj]
        ai_old = a[i]
        aj_old = a[j]
        if s[i] != s[j]:
            quad = K[ii, ii] + K[jj, jj] + 2.0 * Qij
            if quad <= 0.0:
                quad = TAU
            delta = (-G[i] - G[j]) / quad
            diff = a[i] - a[j]
            a[i] += delta
            a[j] += delta
            if diff > 0.0:
                if a[j] < 0.0:
                    a[j] = 0.0
                    a[i] = diff
            else:
                if a[i] < 0.0:
                    a[i] = 0.0
                    a[j] = -diff
            if diff > 0.0:
                if a[i] > box:
                    a[i] = box
                    a[j] = box - diff
            else:
                if a[j] > box:
                    a[j] = box
                    a[i] = box + diff
        else:
            quad = K[ii, ii] + K[jj, jj] - 2.0 * Qij
            if quad <= 0.0:
                quad = TAU
            delta = (G[i] - G[j]) / quad
            total = a[i] + a[j]
            a[i] -= delta
            a[j] += delta
            if total > box:
                if a[i] > box:
                    a[i] = box
                    a[j] = total - box
            else:
                if a[j] < 0.0:
                    a[j] = 0.0
                    a[i] = total
            if total > box:
                if a[j] > box:
                    a[j] = box
                    a[i] = total - box
            else:
                if a[i] < 0.0:
                    a[i] = 0.0
                    a[j] = total

        dai = (a[i] - ai_old) * s[i]
        daj = (a[j] - aj_old) * s[j]
        for r in range(n):
            d = K[ii, r] * dai + K[jj, r] * daj
            G[r] += d
            G[r + n] -= d
        it += 1
        if it <= ntrace:
            obj = 0.0
            for t in range(ln):
                lin = eps - y[t] if t < n else eps + y[t - n]
                obj += a[t] * (G[t] + lin)
            obj_trace[it - 1] = 0.5 * obj
    return a, G, s, it, violation


@njit(cache=True, nogil=True)
def _rho(a, G, s, box):
    ub = np.inf
    lb = -np.inf
    nfree = 0
    total = 0.0
    for t in range(a.shape[0]):
        yG = s[t] * G[t]
        if a[t] >= box:
            if s[t] < 0:
                ub = min(ub, yG)
            else:
                lb = max(lb, yG)
        elif a[t] <= 0.0:
            if s[t] > 0:
                ub = min(ub, yG)
            else:
                lb = max(lb, yG)
        else:
            nfree += 1
            total += yG
    if nfree > 0:
        return total / nfree
    return 0.5 * (ub + lb)


def dual_objective(K: np.ndarray, y: np.ndarray, beta: np.ndarray, epsilon: float) -> float:
    """Dual objective ``0.5 b'Kb - y'b + eps*|b|_1`` (minimised)."""
    return float(0.5 * beta @ K @ beta - y @ beta + epsilon * np.abs(beta).sum())


def primal_objective(K: np.ndarray, y: np.ndarray, beta: np.ndarray, bias: float,
                     box: float, epsilon: float) -> float:
    f = K @ beta + bias
    loss = np.maximum(np.abs(y - f) - epsilon, 0.0).sum()
    return float(0.5 * beta @ K @ beta + box * loss)


def svr_fit(X, y, cfg: SvrConfig, gamma: float, *, gram: Optional[np.ndarray] = None,
            init: Optional[np.ndarray] = None, objective_trace: int = 0) -> SvrModel:
    """Fit one SVR unit.

    ``gram`` may supply the precomputed training kernel matrix, and ``init``
    a feasible warm-start vector of dual coefficients.  When
    ``objective_trace`` is positive, the dual objective of the first that
    many iterations is attached to the returned model as ``trace``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64).ravel()
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise InputError(f"X of shape {X.shape} does not match y of length {y.shape[0]}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise InputError("svr_fit received non-finite inputs")
    n = y.shape[0]
    if n < 1:
        raise InputError("svr_fit needs at least one sample")
    box = cfg.box(n)
    K = rbf_matrix(X, X, gamma) if gram is None else np.asarray(gram, dtype=np.float64)
    if K.shape != (n, n):
        raise InputError(f"gram has shape {K.shape}, expected {(n, n)}")
    K = np.ascontiguousarray(K)

    beta0 = np.zeros(n)
    if init is not None:
        beta0 = np.clip(np.asarray(init, dtype=np.float64).ravel(), -box, box)
        if beta0.shape != (n,) or abs(beta0.sum()) > 1e-9 * max(1.0, box * n):
            beta0 = np.zeros(n)
    Kbeta0 = K @ beta0 if np.any(beta0) else np.zeros(n)
    trace = np.zeros(int(objective_trace))
    a, G, s, it, violation = _smo(K, y, float(box), float(cfg.epsilon), float(cfg.kkt_tol),
                                  int(cfg.max_iter), beta0, Kbeta0, trace)
    beta = a[:n] - a[n:]
    bias = -float(_rho(a, G, s, float(box)))
    if not violation < cfg.kkt_tol and it >= cfg.max_iter:
        gap = primal_objective(K, y, beta, bias, box, cfg.epsilon) + dual_objective(
            K, y, beta, cfg.epsilon)
        raise ConvergenceError(
            f"SMO hit max_iter={cfg.max_iter} with KKT violation {violation:.3g}",
            gap=gap, iterations=it)
    absb = np.abs(beta)
    support = np.flatnonzero(absb > 0.0)
    marginal = np.flatnonzero((absb > 0.0) & (absb < box * (1.0 - MARGINAL_SHRINK)))
    model = SvrModel(beta, bias, support, marginal, X, float(gamma), float(box),
                     float(cfg.epsilon), it)
    if objective_trace:
        object.__setattr__(model, "trace", trace[: min(it, trace.size)])
    return model


def svr_predict(model: SvrModel, z) -> np.ndarray | float:
    """Kernel expansion ``bias + sum_i dual_i K(x_i, z)`` for one or many points."""
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    Z = z[None, :] if single else z
    if Z.shape[1] != model.train_X.shape[1]:
        raise InputError(f"dimension mismatch: {Z.shape[1]} vs {model.train_X.shape[1]}")
    sv = model.support_ids
    if sv.size == 0:
        out = np.full(Z.shape[0], model.bias)
    else:
        out = rbf_matrix(Z, model.train_X[sv], model.gamma) @ model.dual_coefs[sv] + model.bias
    return float(out[0]) if single else out


def svr_variance(model: SvrModel, z) -> np.ndarray | float:
    """Posterior variance ``K_zz - k_M' K_MM^{-1} k_M`` over the marginal vectors."""
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    Z = z[None, :] if single else z
    if Z.shape[1] != model.train_X.shape[1]:
        raise InputError(f"dimension mismatch: {Z.shape[1]} vs {model.train_X.shape[1]}")
    factor = model._marginal_factor
    if factor is None:
        out = np.ones(Z.shape[0])
    else:
        Xm, chol = factor
        Kmz = rbf_matrix(Xm, Z, model.gamma)
        sol = scipy.linalg.cho_solve(chol, Kmz, check_finite=False)
        out = np.clip(1.0 - np.einsum("ij,ij->j", Kmz, sol), 0.0, 1.0)
    return float(out[0]) if single else out


def kkt_residuals(model: SvrModel, y) -> np.ndarray:
    """Training residuals ``y - f(x)`` used by complementarity checks."""
    return np.asarray(y, dtype=np.float64) - svr_predict(model, model.train_X)
