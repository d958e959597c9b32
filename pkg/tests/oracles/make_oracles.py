"""Recompute the frozen oracle values in frozen.json.

Independent of the package: the SVR dual is solved by cvxpy, lasso and
logistic objectives by accelerated proximal gradient, the noise density
moments by adaptive quadrature and the linear-layer covariance by Monte
Carlo.  Run ``python3 tests/oracles/make_oracles.py`` to refresh.
"""

import json
from pathlib import Path

import cvxpy as cp
import numpy as np
from scipy import integrate
from scipy.spatial.distance import cdist

try:
    from . import instances as inst
except ImportError:
    import instances as inst

OUT = Path(__file__).with_name("frozen.json")


def svr_dual_qp(X, y, cost, eps, gamma) -> float:
    K = np.exp(-gamma * cdist(X, X, "sqeuclidean"))
    n = y.size
    beta = cp.Variable(n)
    obj = 0.5 * cp.quad_form(beta, cp.psd_wrap(K + 1e-12 * np.eye(n))) - y @ beta \
        + eps * cp.norm1(beta)
    prob = cp.Problem(cp.Minimize(obj), [cp.sum(beta) == 0, cp.abs(beta) <= cost])
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12)
    b = beta.value
    return float(0.5 * b @ K @ b - y @ b + eps * np.abs(b).sum())


def _fista(f_grad, prox, obj, x0, step, iters, tol=1e-13):
    """Accelerated proximal gradient with restarts; stops once the iterates stall."""
    x = x0.copy()
    z = x0.copy()
    t = 1.0
    for _ in range(iters):
        g = f_grad(z)
        x_new = prox(z - step * g, step)
        if np.max(np.abs(x_new - z)) < tol * step and np.max(np.abs(x_new - x)) < tol:
            return x_new
        t_new = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        z = x_new + ((t - 1) / t_new) * (x_new - x)
        # restart on objective increase
        if obj(x_new) > obj(x):
            z = x_new.copy()
            t_new = 1.0
        x, t = x_new, t_new
    return x


def _prox_l1_tail(lam):
    """Soft-threshold every coordinate but the last (the intercept)."""
    def prox(v, step):
        out = v.copy()
        out[:-1] = np.sign(v[:-1]) * np.maximum(np.abs(v[:-1]) - step * lam, 0.0)
        return out
    return prox


def lasso_oracle(A, y, lam) -> float:
    n = y.size
    D = np.column_stack([A, np.ones(n)])
    obj = lambda x: float(np.sum((y - D @ x) ** 2) / n + lam * np.abs(x[:-1]).sum())  # noqa: E731
    grad = lambda x: -2.0 * D.T @ (y - D @ x) / n  # noqa: E731
    L = 2.0 * np.linalg.eigvalsh(D.T @ D / n).max()
    x = _fista(grad, _prox_l1_tail(lam), obj, np.zeros(D.shape[1]), 1.0 / L, 200_000)
    return obj(x)


def logistic_oracle(A, y, lam) -> float:
    n = y.size
    D = np.column_stack([A, np.ones(n)])

    def obj(x):
        eta = D @ x
        return float(np.mean(np.logaddexp(0.0, eta) - y * eta) + lam * np.abs(x[:-1]).sum())

    def grad(x):
        eta = D @ x
        return D.T @ (1.0 / (1.0 + np.exp(-eta)) - y) / n

    L = 0.25 * np.linalg.eigvalsh(D.T @ D / n).max()
    x = _fista(grad, _prox_l1_tail(lam), obj, np.zeros(D.shape[1]), 1.0 / L, 200_000)
    return obj(x)


def noise_moments(c, eps):
    dens = lambda r: c / (2 * (1 + c * eps)) * np.exp(-c * max(0.0, abs(r) - eps))  # noqa: E731
    pts = [-eps, eps]
    mass = integrate.quad(dens, -np.inf, -eps)[0] + integrate.quad(dens, -eps, eps, points=pts)[0] \
        + integrate.quad(dens, eps, np.inf)[0]
    var = integrate.quad(lambda r: r * r * dens(r), -np.inf, -eps)[0] \
        + integrate.quad(lambda r: r * r * dens(r), -eps, eps)[0] \
        + integrate.quad(lambda r: r * r * dens(r), eps, np.inf)[0]
    return mass, var


def linear_layer_mc(draws: int = 100_000):
    """Covariance of (b + db) + (W + dW) Z over Gaussian inputs and estimation errors.

    Z ~ N(mu, S); the coefficient error [dW_j, db_j] of output j is
    N(0, rv_j G^-1), independent across outputs and of Z.
    """
    W, b, mu, S, rv, G = inst.cov_instance()
    rng = np.random.default_rng(777)
    Z = rng.multivariate_normal(mu, S, size=draws)
    Ginv = np.linalg.inv(G)
    Zt = np.column_stack([Z, np.ones(draws)])
    out = np.empty((draws, rv.size))
    for j in range(rv.size):
        E = rng.multivariate_normal(np.zeros(G.shape[0]), rv[j] * Ginv, size=draws)
        out[:, j] = Zt @ np.append(W[j], b[j]) + np.einsum("nk,nk->n", Zt, E)
    return np.cov(out, rowvar=False)


def main():
    frozen = {
        "svr_dual_objective": [svr_dual_qp(*inst.svr_instance(i)) for i in range(inst.N_INSTANCES)],
        "lasso_objective": [lasso_oracle(*inst.lasso_instance(i)) for i in range(inst.N_INSTANCES)],
        "logistic_objective": [logistic_oracle(*inst.logistic_instance(i))
                               for i in range(inst.N_INSTANCES)],
    }
    mass, var = noise_moments(10.0, 0.01)
    frozen["noise_c10_eps001"] = {"mass": mass, "variance": var}
    frozen["linear_layer_mc_cov"] = linear_layer_mc().tolist()
    OUT.write_text(json.dumps(frozen, indent=1) + "\n", encoding="utf-8")
    print(f"wrote {OUT}")


if __name__ == "__main__":
    main()
