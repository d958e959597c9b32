"""Penalized linear and logistic regression for the dense layers.

All solvers minimise a ``(1/n)``-scaled loss plus ``lam * ||w||_1``; the
intercept is never penalized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.linalg import cho_factor, cho_solve
from scipy.special import expit

from .errors import ConfigError, ConvergenceError, InputError, NumericalError

SEPARATION_LIMIT = 1e4
POLISH_EVERY = 50


@dataclass(frozen=True)
class LassoConfig:
    lam: float = 1e-4
    tol: float = 1e-8
    max_sweeps: int = 10_000
    penalize_bias: bool = False

    def __post_init__(self):
        if not self.lam >= 0:
            raise ConfigError(f"lambda must be nonnegative, got {self.lam}")
        if not self.tol > 0 or self.max_sweeps < 1:
            raise ConfigError("tol must be positive and max_sweeps at least 1")
        if self.penalize_bias:
            raise ConfigError("penalizing the intercept is not supported")


@dataclass
class FitResult:
    """Per-output coefficients; ``weights`` is (m, q)."""

    weights: np.ndarray
    bias: np.ndarray
    residual_variance: np.ndarray
    converged: bool
    sweeps_used: int
    kkt_violation: float = 0.0
    separated: bool = False


@njit(cache=True, nogil=True)
def _cd_quadratic(H, b, lam, x, max_sweeps, tol):
    """Coordinate descent on 0.5 x'Hx - b'x + sum lam_j |x_j|, in place.

    Returns (sweeps, final KKT violation).
    """
    q = x.shape[0]
    r = b - H @ x  # r = b - Hx
    viol = 0.0
    for sweep in range(1, max_sweeps + 1):
        for k in range(q):
            hkk = H[k, k]
            if hkk <= 0.0:
                continue
            old = x[k]
            z = r[k] + hkk * old
            if z > lam[k]:
                new = (z - lam[k]) / hkk
            elif z < -lam[k]:
                new = (z + lam[k]) / hkk
            else:
                new = 0.0
            d = new - old
            if d != 0.0:
                x[k] = new
                for l in range(q):
                    r[l] -= H[l, k] * d
        viol = 0.0
        for k in range(q):
            if H[k, k] <= 0.0:
                continue
            if x[k] > 0.0:
                v = abs(r[k] - lam[k])
            elif x[k] < 0.0:
                v = abs(r[k] + lam[k])
            else:
                v = abs(r[k]) - lam[k]
            if v > viol:
                viol = v
        if viol <= tol:
            return sweep, viol
    return max_sweeps, viol


def _kkt(H, b, lam, x) -> float:
    r = b - H @ x
    live = np.diag(H) > 0
    v = np.where(x > 0, np.abs(r - lam), np.where(x < 0, np.abs(r + lam), np.abs(r) - lam))
    return float(np.max(v[live], initial=0.0))


def _quad_obj(H, b, lam, x) -> float:
    return float(0.5 * x @ H @ x - b @ x + lam @ np.abs(x))


def _polish(H, b, lam, x):
    """Exact solve on the current active set with the current signs."""
    act = np.flatnonzero(x != 0)
    if act.size == 0:
        return None
    s = np.sign(x[act])
    try:
        sol = np.linalg.solve(H[np.ix_(act, act)], b[act] - lam[act] * s)
    except np.linalg.LinAlgError:
        return None
    if np.any(np.sign(sol) != s):
        return None
    out = np.zeros_like(x)
    out[act] = sol
    return out


def solve_l1_quadratic(H, b, lam, tol: float = 1e-8, max_sweeps: int = 10_000, x0=None):
    """Minimise ``0.5 x'Hx - b'x + sum lam_j |x_j|`` for PSD ``H``.

    Coordinate descent with periodic exact active-set refinement.  Returns
    ``(x, sweeps, violation)``; ``violation > tol`` means not converged.
    """
    H = np.ascontiguousarray(H, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    lam = np.broadcast_to(np.asarray(lam, dtype=np.float64), b.shape).copy()
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=np.float64)
    used = 0
    viol = _kkt(H, b, lam, x)
    while used < max_sweeps and viol > tol:
        block = min(POLISH_EVERY, max_sweeps - used)
        sweeps, viol = _cd_quadratic(H, b, lam, x, block, tol)
        used += sweeps
        if viol <= tol:
            break
        cand = _polish(H, b, lam, x)
        if cand is not None and _quad_obj(H, b, lam, cand) <= _quad_obj(H, b, lam, x):
            cv = _kkt(H, b, lam, cand)
            if cv <= viol:
                x, viol = cand, cv
    return x, used, viol


def _design(A, Y):
    A = np.asarray(A, dtype=np.float64)
    if A.ndim == 1:
        A = A[:, None]
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    if A.ndim != 2 or A.shape[0] < 1:
        raise InputError("design must be a nonempty 2-D array")
    if Y.shape[0] != A.shape[0]:
        raise InputError(f"design has {A.shape[0]} rows but targets have {Y.shape[0]}")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(Y))):
        raise InputError("design and targets must be finite")
    return A, Y


def _residual_variance(A, Y, W, b):
    n = A.shape[0]
    resid = Y - A @ W.T - b
    df = np.count_nonzero(W, axis=1) + 1
    return (resid**2).sum(axis=0) / np.maximum(1, n - df)


def lasso_objective(A, y, w, b, lam: float) -> float:
    """``(1/n)||y - Aw - b||^2 + lam ||w||_1``."""
    r = np.asarray(y) - np.asarray(A) @ w - b
    return float(r @ r / r.shape[0] + lam * np.abs(w).sum())


def lasso_fit(A, Y, cfg: LassoConfig = LassoConfig(), init: np.ndarray | None = None) -> FitResult:
    """Per-output lasso with an unpenalized intercept.

    ``init`` optionally warm-starts the (m, q) weight matrix.
    """
    A, Y = _design(A, Y)
    n, q = A.shape
    m = Y.shape[1]
    amean = A.mean(axis=0)
    ymean = Y.mean(axis=0)
    Ac = A - amean
    Yc = Y - ymean
    H = 2.0 * (Ac.T @ Ac) / n
    B = 2.0 * (Ac.T @ Yc) / n
    lam = np.full(q, cfg.lam)
    W = np.zeros((m, q))
    sweeps = 0
    worst = 0.0
    for j in range(m):
        x0 = None if init is None else np.asarray(init, dtype=np.float64)[j]
        W[j], used, viol = solve_l1_quadratic(H, B[:, j], lam, cfg.tol, cfg.max_sweeps, x0)
        sweeps = max(sweeps, used)
        worst = max(worst, viol)
        if viol > cfg.tol:
            raise ConvergenceError(
                f"lasso did not converge for output {j} within {cfg.max_sweeps} sweeps "
                f"(KKT violation {viol:.3g})", gap=viol, iterations=used)
    bias = ymean - W @ amean
    return FitResult(W, bias, _residual_variance(A, Y, W, bias), True, sweeps, worst)


def ols_fit(A, Y) -> FitResult:
    """Least squares with intercept; a 1e-10 ridge is added only if needed."""
    A, Y = _design(A, Y)
    n, q = A.shape
    amean = A.mean(axis=0)
    ymean = Y.mean(axis=0)
    Ac = A - amean
    G = Ac.T @ Ac
    C = Ac.T @ (Y - ymean)
    W = None
    for jitter in (0.0, 1e-10 * max(1.0, float(np.trace(G)) / max(q, 1))):
        try:
            fac = cho_factor(G + jitter * np.eye(q), lower=True)
        except np.linalg.LinAlgError:
            continue
        W = cho_solve(fac, C).T
        if np.all(np.isfinite(W)):
            break
        W = None
    if W is None:
        raise NumericalError("design is rank deficient beyond the 1e-10 ridge")
    bias = ymean - W @ amean
    resid = Y - A @ W.T - bias
    rv = (resid**2).sum(axis=0) / max(1, n - (q + 1))
    return FitResult(W, bias, rv, True, 0, 0.0)


def logistic_objective(A, y, w, b, lam: float) -> float:
    """``(1/n) sum log(1 + e^eta) - y eta`` plus ``lam ||w||_1``."""
    eta = np.asarray(A) @ w + b
    return float(np.mean(np.logaddexp(0.0, eta) - y * eta) + lam * np.abs(w).sum())


def logistic_lasso_fit(A, y, cfg: LassoConfig = LassoConfig(tol=1e-7),
                       init: tuple[np.ndarray, float] | None = None) -> FitResult:
    """Proximal Newton for lasso-penalized logistic regression.

    Each outer step minimises the local quadratic model with coordinate
    descent and backtracks on the exact objective.  Weights beyond 1e4 in
    magnitude are reported as separation rather than raised.
    """
    A, Y = _design(A, y)
    y = Y[:, 0]
    if not np.all((y == 0) | (y == 1)):
        raise InputError("logistic regression needs 0/1 labels")
    if y.min() == y.max():
        raise InputError("logistic regression needs both classes present")
    n, q = A.shape
    D = np.column_stack([A, np.ones(n)])
    lam = np.append(np.full(q, cfg.lam), 0.0)
    if init is None:
        pbar = y.mean()
        x = np.zeros(q + 1)
        x[-1] = np.log(pbar / (1.0 - pbar))
    else:
        x = np.append(np.asarray(init[0], dtype=np.float64).ravel(), float(init[1]))

    def objective(v):
        eta = D @ v
        return float(np.mean(np.logaddexp(0.0, eta) - y * eta) + lam @ np.abs(v))

    def gradient(v):
        return D.T @ (expit(D @ v) - y) / n

    fval = objective(x)
    viol = _kkt_logistic(gradient(x), lam, x)
    steps = 0
    separated = False
    while viol > cfg.tol and steps < cfg.max_sweeps:
        steps += 1
        p = expit(D @ x)
        wts = p * (1.0 - p) / n
        H = (D * wts[:, None]).T @ D + 1e-12 * np.eye(q + 1)
        g = D.T @ (p - y) / n
        xhat, _, _ = solve_l1_quadratic(H, H @ x - g, lam, tol=min(1e-3 * viol, 1e-10) + 1e-14,
                                        max_sweeps=10_000, x0=x)
        d = xhat - x
        decrease = float(g @ d + lam @ (np.abs(xhat) - np.abs(x)))
        t = 1.0
        while True:
            cand = x + t * d
            fc = objective(cand)
            if fc <= fval + 1e-4 * t * decrease or t < 1e-12:
                break
            t *= 0.5
        if fc > fval:
            break
        x, fval = cand, fc
        viol = _kkt_logistic(gradient(x), lam, x)
        if np.max(np.abs(x[:-1]), initial=0.0) > SEPARATION_LIMIT:
            separated = True
            break
    eta = D @ x
    if cfg.lam == 0 and np.all((2 * y - 1) * eta > 0):
        separated = True
    converged = viol <= cfg.tol
    if not converged and not separated:
        raise ConvergenceError(
            f"logistic lasso did not converge in {steps} Newton steps (KKT violation {viol:.3g})",
            gap=viol, iterations=steps)
    W = x[:-1][None, :]
    bias = np.array([x[-1]])
    resid = y - expit(eta)
    df = np.count_nonzero(W) + 1
    rv = np.array([float(resid @ resid) / max(1, n - df)])
    return FitResult(W, bias, rv, converged, steps, viol, separated)


def _kkt_logistic(grad, lam, x) -> float:
    r = -grad
    v = np.where(x > 0, np.abs(r - lam), np.where(x < 0, np.abs(r + lam), np.abs(r) - lam))
    return float(np.max(v, initial=0.0))
