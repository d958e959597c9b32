"""Acceptance criteria 1-10; each test prints one PASS/FAIL line."""

import os
import time

import numpy as np
import pytest

from helpers import random_model
from oracles import instances as inst
from kstonet.experiments import run_experiment
from kstonet.glm import LassoConfig, lasso_fit, lasso_objective, logistic_lasso_fit, logistic_objective
from kstonet.imputation import LatentState, init_latent, latent_grad, log_joint
from kstonet.kernel import rbf_matrix
from kstonet.model import Activation, DenseLayer, NoiseDensity, forward, noise_logpdf, noise_score
from kstonet.svr import SvrConfig, dual_objective, kkt_residuals, svr_fit
from kstonet.uq import propagate_cov


@pytest.fixture
def report(capsys):
    def emit(n, name, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {n:2d}] {'PASS' if ok else 'FAIL'} {name}: {detail}")
        assert ok, f"criterion {n} ({name}) failed: {detail}"
    return emit


def svr_kkt_violation(model, y, eps) -> float:
    """Largest violation of the SVR optimality conditions (tube, box, equality)."""
    r = kkt_residuals(model, y)
    b = model.dual_coefs
    a = np.abs(b)
    zero = a == 0
    bound = a >= model.box * (1 - 1e-9)
    free = ~zero & ~bound
    s = np.sign(b)
    parts = [np.maximum(np.abs(r[zero]) - eps, 0), np.maximum(eps - s[bound] * r[bound], 0),
             np.abs(s[free] * r[free] - eps), np.maximum(a - model.box, 0), [abs(b.sum())]]
    return float(max(np.max(p, initial=0.0) for p in parts))


def test_c01_svr_oracle(frozen, report):
    t0 = time.perf_counter()
    rel, kkt = 0.0, 0.0
    for i, ref in enumerate(frozen["svr_dual_objective"]):
        X, y, cost, eps, gamma = inst.svr_instance(i)
        m = svr_fit(X, y, SvrConfig(cost=cost, epsilon=eps), gamma)
        obj = dual_objective(rbf_matrix(X, X, gamma), y, m.dual_coefs, eps)
        rel = max(rel, abs(obj - ref) / max(abs(ref), 1e-12))
        kkt = max(kkt, svr_kkt_violation(m, y, eps))
    dt = time.perf_counter() - t0
    ok = rel <= 1e-4 and kkt <= 1e-3 and dt < 10
    report(1, "SVR oracle", ok, f"max rel gap {rel:.2e}, max KKT violation {kkt:.2e}, {dt:.2f}s")


def test_c02_glm_oracles(frozen, report):
    t0 = time.perf_counter()
    lin = max(abs(lasso_objective(A, y, f.weights[0], f.bias[0], lam) - ref)
              for ref, (A, y, lam) in ((r, inst.lasso_instance(i))
                                       for i, r in enumerate(frozen["lasso_objective"]))
              for f in [lasso_fit(A, y, LassoConfig(lam=lam))])
    log = max(abs(logistic_objective(A, y, f.weights[0], f.bias[0], lam) - ref)
              for ref, (A, y, lam) in ((r, inst.logistic_instance(i))
                                       for i, r in enumerate(frozen["logistic_objective"]))
              for f in [logistic_lasso_fit(A, y, LassoConfig(lam=lam, tol=1e-7))])
    dt = time.perf_counter() - t0
    n = len(frozen["lasso_objective"]) + len(frozen["logistic_objective"])
    ok = lin <= 1e-6 and log <= 1e-5 and dt < 10 and n == 100
    report(2, "lasso/logistic oracles", ok, f"max gap linear {lin:.2e}, logistic {log:.2e}, {dt:.2f}s")


def _away_from_kinks(model, X, seed):
    r = np.random.default_rng(seed)
    st = init_latent(model, X)
    Y = [y + r.normal(0.0, 0.3, y.shape) for y in st.Y]
    d = Y[0] - st.Y[0]
    near = np.abs(np.abs(d) - model.config.eps_noise) < 1e-3
    Y[0] = Y[0] + 5e-3 * near
    return LatentState(Y, st.V)


def _fd_latent(model, X, y, st, layer, h=1e-6):
    # log_joint is per-sample, so one coordinate can be perturbed for every sample at once
    g = np.zeros_like(st.Y[layer - 1])
    for j in range(g.shape[1]):
        up, dn = st.copy(), st.copy()
        up.Y[layer - 1][:, j] += h
        dn.Y[layer - 1][:, j] -= h
        g[:, j] = (log_joint(model, X, y, up) - log_joint(model, X, y, dn)) / (2 * h)
    return g


def test_c03_gradient_checks(report):
    t0 = time.perf_counter()
    worst = 0.0
    for task, seed in (("regression", 0), ("binary_classification", 1)):
        m = random_model(seed, widths=(4, 3), task=task, sigma_sq=(0.3, 0.3), c_noise=3.0,
                         eps_noise=0.05)
        r = np.random.default_rng(seed)
        X = r.standard_normal((100, m.input_dim))
        y = (forward(m, X)[-1][:, 0] + r.standard_normal(100) if task == "regression"
             else (r.random(100) < 0.5).astype(float))
        st = _away_from_kinks(m, X, seed)
        for layer in (1, 2):
            worst = max(worst, float(np.abs(latent_grad(m, X, y, st, layer)
                                            - _fd_latent(m, X, y, st, layer)).max()))
    d = NoiseDensity(10.0, 0.1)
    pts = np.random.default_rng(2).uniform(-1, 1, 400)
    pts = pts[np.abs(np.abs(pts) - d.eps) > 1e-3][:100]
    h = 1e-6
    fd = (noise_logpdf(d, pts + h) - noise_logpdf(d, pts - h)) / (2 * h)
    worst = max(worst, float(np.abs(noise_score(d, pts) - fd).max()))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-5 and dt < 5
    report(3, "gradient checks", ok, f"max |analytic - FD| {worst:.2e} at 100 points, {dt:.2f}s")


def test_c04_covariance_mc(report):
    t0 = time.perf_counter()
    W, b, mu, S, rv, G = inst.cov_instance()
    # fresh Monte Carlo draw: coefficient error ~ N(0, rv_j G^-1), input ~ N(mu, S)
    r = np.random.default_rng(7)
    draws = 100_000
    Zs = r.multivariate_normal(mu, S, draws)
    Zt = np.column_stack([Zs, np.ones(draws)])
    Ginv = np.linalg.inv(G)
    out = np.empty((draws, W.shape[0]))
    for j in range(W.shape[0]):
        coef = np.append(W[j], b[j]) + r.multivariate_normal(np.zeros(G.shape[0]), rv[j] * Ginv, draws)
        out[:, j] = np.einsum("nk,nk->n", coef, Zt)
    mc = np.cov(out, rowvar=False)
    got = propagate_cov(DenseLayer(W, b, rv, G), mu, S, Activation.IDENTITY)
    rel = float(np.max(np.abs(got - mc) / np.abs(mc)))
    dt = time.perf_counter() - t0
    ok = rel <= 0.05 and dt < 30
    report(4, "covariance vs Monte Carlo", ok, f"max rel error {rel:.3f} over 1e5 draws, {dt:.2f}s")


@pytest.mark.slow
def test_c05_full_rank(tmp_path, report):
    s = run_experiment("full_rank", tmp_path, {})
    first, rise = s["first_epoch_train_le_2"], s["test_rise_after_min"]
    ok = first is not None and first <= 40 and rise <= 0.20
    report(5, "full-row-rank replication", ok,
           f"train MSE <= 2 first at epoch {first}, final train {s['final_train_mse']:.3f}, "
           f"test rise after minimum {100 * rise:.1f}%")


@pytest.mark.slow
def test_c06_knn_sim(tmp_path, report):
    s = run_experiment("knn_sim", tmp_path, {})
    mse = s["final_train_mse"]
    report(6, "kernel-network data replication", 0.7 <= mse <= 1.5, f"final train MSE {mse:.3f}")


@pytest.mark.slow
def test_c07_sparsity(tmp_path, report):
    s = run_experiment("sparsity_sweep", tmp_path, {"epsilons": [0.01, 0.1]})
    t = s["table"]
    ratio = s.get("sv_ratio_max_to_min_eps", float("inf"))
    report(7, "sparsity trend", ratio < 0.2,
           f"mean SV count {t['0.01']['sv_count_mean']:.1f} -> {t['0.1']['sv_count_mean']:.1f} "
           f"(ratio {ratio:.3f})")


@pytest.mark.slow
def test_c08_coverage(tmp_path, report):
    t0 = time.perf_counter()
    s = run_experiment("coverage", tmp_path, {})
    dt = time.perf_counter() - t0
    c = s["mean_coverage"]
    ok = 0.88 <= c <= 0.98 and dt < 1800
    report(8, "interval coverage", ok,
           f"mean coverage {100 * c:.2f}% (sd over datasets {100 * s['coverage_sd_over_datasets']:.2f}%), "
           f"{dt / 60:.1f} min")


@pytest.mark.slow
def test_c09_qsar(tmp_path, report, capsys):
    t0 = time.perf_counter()
    s = run_experiment("qsar_cv", tmp_path, {})
    if s["status"] == "skipped":
        with capsys.disabled():
            print(f"\n[criterion  9] SKIP QSAR cross-validation: {s['reason']}")
        pytest.skip(s["reason"])
    dt = time.perf_counter() - t0
    tr, te = s["mean_train_accuracy"], s["mean_test_accuracy"]
    ok = tr >= 0.99 and te >= 0.88 and dt < 3600
    report(9, "QSAR cross-validation", ok,
           f"train {100 * tr:.2f}%, test {100 * te:.2f}%, {dt / 60:.1f} min")


def test_c10_determinism(tmp_path, report):
    runs = {"knn_sim": {"n": 200, "n_test": 100, "epochs": 3},
            "measurement_error": {"n": 100, "n_test": 50, "epochs": 3},
            "coverage": {"n_datasets": 2, "n": 80, "n_test": 20, "epochs": 2}}
    same = []
    for name, doc in runs.items():
        a = run_experiment(name, tmp_path / name / "a", doc)
        b = run_experiment(name, tmp_path / name / "b", doc)
        same.append((tmp_path / name / "a" / "metrics.csv").read_bytes()
                    == (tmp_path / name / "b" / "metrics.csv").read_bytes() and a == b)
    report(10, "determinism", all(same),
           ", ".join(f"{n} {'identical' if s else 'DIFFERENT'}" for n, s in zip(runs, same)))
