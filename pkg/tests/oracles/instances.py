"""Seeded problem instances shared by the oracle generator and the tests."""

import numpy as np

N_INSTANCES = 50


def _rng(kind: int, i: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(20240601, spawn_key=(kind, i)))


def svr_instance(i: int):
    """(X, y, cost, eps, gamma) with n <= 30."""
    rng = _rng(0, i)
    n = int(rng.integers(2, 31))
    p = int(rng.integers(1, 5))
    X = rng.standard_normal((n, p))
    y = np.sin(X.sum(axis=1)) + 0.3 * rng.standard_normal(n)
    cost = float(rng.choice([0.1, 1.0, 10.0]))
    eps = float(rng.choice([0.0, 0.01, 0.1]))
    gamma = float(rng.uniform(0.2, 2.0))
    return X, y, cost, eps, gamma


def lasso_instance(i: int):
    """(A, y, lam) with n=15, q=5."""
    rng = _rng(1, i)
    A = rng.standard_normal((15, 5))
    w = rng.standard_normal(5) * (rng.random(5) < 0.6)
    y = A @ w + 0.5 + 0.3 * rng.standard_normal(15)
    lam = float(10 ** rng.uniform(-3, 0))
    return A, y, lam


def logistic_instance(i: int):
    """(A, y, lam) with n=40 and both classes present."""
    rng = _rng(2, i)
    A = rng.standard_normal((40, 4))
    w = rng.standard_normal(4)
    p = 1.0 / (1.0 + np.exp(-(A @ w - 0.2)))
    y = (rng.random(40) < p).astype(float)
    y[:2] = (0.0, 1.0)
    lam = 0.1 if i == 0 else float(10 ** rng.uniform(-3, -0.5))
    return A, y, lam


def cov_instance():
    """Linear layer with Gaussian input.

    Returns weight, bias, input mean and covariance, residual variances and
    the intercept-augmented design Gram of the data the layer was fitted on.
    """
    rng = _rng(3, 0)
    m0, m1 = 3, 2
    W = rng.uniform(-1.5, 1.5, size=(m1, m0))
    b = rng.standard_normal(m1)
    mu = rng.standard_normal(m0)
    L = rng.standard_normal((m0, m0)) * 0.4
    S = L @ L.T + 0.1 * np.eye(m0)
    rv = np.array([0.2, 0.05])
    D = np.column_stack([rng.standard_normal((12, m0)), np.ones(12)])
    return W, b, mu, S, rv, D.T @ D
