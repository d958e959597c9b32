import numpy as np
import pytest

from helpers import random_model
from kstonet.data import Dataset, gen_measurement_error
from kstonet.errors import DivergenceError, InputError
from kstonet.glm import LassoConfig, lasso_fit, lasso_objective
from kstonet.imputation import HmcConfig, impute_all
from kstonet.kernel import KernelSpec, rbf_matrix
from kstonet.model import NetConfig, forward
from kstonet.svr import SvrConfig, dual_objective, svr_fit, svr_predict
from kstonet.trainer import (MlpModel, TrainConfig, iro_train, predict, predict_mean,
                             sgd_mlp_train, write_trace_csv)


def _small(epochs=3, seed=0, threads=1, **kw):
    train = gen_measurement_error(60, seed=seed)
    net = NetConfig(hidden_widths=(3, 2), c_noise=5.0, eps_noise=0.05, sigma_sq=(0.01, 0.05))
    cfg = TrainConfig(epochs=epochs, hmc=HmcConfig(steps=5, lr=1e-3, seed=seed),
                      svr=SvrConfig(cost=2.0, epsilon=0.05), seed=seed, threads=threads, **kw)
    return train, net, cfg


class TestIro:
    def test_zero_epochs(self):
        train, net, cfg = _small(epochs=0)
        models, traces = iro_train(train, net, cfg)
        assert len(models) == 1 and traces == []

    def test_deterministic_and_thread_invariant(self):
        runs = [iro_train(*_small(threads=t)) for t in (1, 1, 3)]
        ref_models, ref_traces = runs[0]
        for models, traces in runs[1:]:
            assert [t.train_metric for t in traces] == [t.train_metric for t in ref_traces]
            for a, b in zip(models, ref_models):
                for ua, ub in zip(a.svr_layer, b.svr_layer):
                    np.testing.assert_array_equal(ua.dual_coefs, ub.dual_coefs)
                for la, lb in zip(a.dense_layers, b.dense_layers):
                    np.testing.assert_array_equal(la.weight, lb.weight)

    def test_traces(self, tmp_path):
        train, net, cfg = _small()
        test = gen_measurement_error(30, seed=9)
        models, traces = iro_train(train, net, cfg, test)
        assert len(models) == cfg.epochs + 1
        for t in traces:
            assert t.train_metric >= 0 and t.test_metric >= 0 and len(t.sv_counts) == 3
        np.testing.assert_allclose(traces[-1].train_metric,
                                   np.mean((predict(models, train.X) - train.y) ** 2), rtol=1e-12)
        path = write_trace_csv(tmp_path / "t.csv", traces)
        assert path.read_text().splitlines()[0] == "epoch,train_metric,test_metric,sv_count_mean,seconds"

    def test_ring_buffer(self):
        train, net, cfg = _small(epochs=4, keep_snapshots=2)
        models, traces = iro_train(train, net, cfg)
        assert len(models) == 2 and len(traces) == 4
        assert models[-1].meta["epoch"] == 4

    def test_realizable_reaches_tube_floor(self):
        r = np.random.default_rng(0)
        X = r.standard_normal((80, 2))
        gamma, eps = 0.5, 0.05
        planted = svr_fit(X, np.sin(X[:, 0]) + 0.5 * X[:, 1], SvrConfig(cost=10, epsilon=eps), gamma)
        a, c = 2.0, 0.5
        y = a * np.tanh(svr_predict(planted, X)) + c
        # refitting the planted unit is exact up to the tube, and tanh is 1-Lipschitz
        floor = (a * eps) ** 2
        net = NetConfig(hidden_widths=(1,), c_noise=10.0, eps_noise=eps, sigma_sq=(0.01,))
        cfg = TrainConfig(epochs=5, hmc=HmcConfig(steps=25, lr=1e-3, alpha=0.1),
                          svr=SvrConfig(cost=10.0, epsilon=eps), kernel=KernelSpec(gamma))
        _, traces = iro_train(Dataset(X, y), net, cfg)
        assert traces[-1].train_metric <= floor

    def test_ro_step_optimal(self):
        train, net, cfg = _small(epochs=2)
        net = NetConfig(hidden_widths=(3,), c_noise=5.0, eps_noise=0.05, sigma_sq=(0.05,))
        models, _ = iro_train(train, net, cfg)
        prev, cur = models[-2], models[-1]
        Z1 = forward(prev, train.X)[0]
        state = impute_all(prev, train.X, train.y, cfg.hmc, epoch=2, svr_mean=Z1)
        A = net.activation(state.Y[0])
        fresh = lasso_fit(A, train.y, cfg.layer_lasso(1)[0])
        lam = cfg.layer_lasso(1)[0].lam
        got = lasso_objective(A, train.y, cur.dense_layers[0].weight[0], cur.dense_layers[0].bias[0], lam)
        ref = lasso_objective(A, train.y, fresh.weights[0], fresh.bias[0], lam)
        assert got <= ref + 1e-8
        gamma = cur.svr_layer[0].gamma
        K = rbf_matrix(train.X, train.X, gamma)
        for k, u in enumerate(cur.svr_layer):
            cold = svr_fit(train.X, state.Y[0][:, k], cfg.svr, gamma)
            d_got = dual_objective(K, state.Y[0][:, k], u.dual_coefs, cfg.svr.epsilon)
            d_ref = dual_objective(K, state.Y[0][:, k], cold.dual_coefs, cfg.svr.epsilon)
            assert d_got <= d_ref + 1e-4 * abs(d_ref)

    def test_imputation_concentrates_as_noise_shrinks(self):
        m = random_model(3, n=30, widths=(3, 2), sigma_sq=(0.1, 0.1))
        X = np.random.default_rng(1).standard_normal((200, 3))
        y = forward(m, X)[-1][:, 0] + 0.1 * np.random.default_rng(2).standard_normal(200)
        gaps = []
        for s2 in (1e-1, 1e-2, 1e-3):
            mm = type(m)(m.svr_layer, m.dense_layers,
                         NetConfig(hidden_widths=(3, 2), sigma_sq=(s2, s2)))
            st = impute_all(mm, X, y, HmcConfig(steps=50, lr=(1e-3, 0.05 * s2), alpha=0.5))
            gaps.append(np.mean((st.Y[1] - forward(mm, X)[1]) ** 2))
        assert gaps[0] > gaps[1] > gaps[2]

    def test_error_annotated(self):
        train, net, cfg = _small(epochs=2)
        net = NetConfig(hidden_widths=(3,), c_noise=5.0, eps_noise=0.05, sigma_sq=(1e-30,))
        cfg = TrainConfig(epochs=2, hmc=HmcConfig(steps=5, lr=1.0), svr=cfg.svr)
        with pytest.raises(DivergenceError) as exc:
            iro_train(train, net, cfg)
        assert exc.value.epoch == 1 and exc.value.layer_index == 1
        assert "epoch 1" in str(exc.value)

    def test_binary_task(self):
        r = np.random.default_rng(4)
        X = r.standard_normal((60, 2))
        y = (X[:, 0] + 0.3 * r.standard_normal(60) > 0).astype(float)
        net = NetConfig(hidden_widths=(3,), task="binary_classification", sigma_sq=(1.0,))
        cfg = TrainConfig(epochs=3, hmc=HmcConfig(steps=5, lr=1e-3),
                          svr=SvrConfig(cost=1.0, epsilon=0.1))
        models, traces = iro_train(Dataset(X, y, task="binary_classification"), net, cfg)
        labels = predict(models, X, 2)
        assert set(np.unique(labels)) <= {0.0, 1.0}
        assert 0.0 <= traces[-1].train_metric <= 1.0
        np.testing.assert_allclose(traces[-1].train_metric, np.mean(predict(models, X) == y))

    def test_rejects_tiny_data(self):
        _, net, cfg = _small()
        with pytest.raises(InputError):
            iro_train(Dataset(np.zeros((1, 5)), np.zeros(1)), net, cfg)


class TestPredict:
    def test_k_one_is_final_forward(self, small_fit):
        train, test, models, _ = small_fit
        np.testing.assert_array_equal(predict_mean(models, test.X, 1),
                                      forward(models[-1], test.X)[-1][:, 0])

    def test_identical_snapshots(self, small_fit):
        _, test, models, _ = small_fit
        same = [models[-1]] * 4
        np.testing.assert_allclose(predict_mean(same, test.X, 4), predict_mean(same, test.X, 1),
                                   rtol=1e-15)

    def test_hand_mean(self, small_fit):
        _, test, models, _ = small_fit
        Z = test.X[:5]
        for k in (2, 3):
            ref = [np.mean([forward(m, z)[-1][0] for m in models[-k:]]) for z in Z]
            np.testing.assert_allclose(predict_mean(models, Z, k), ref, rtol=1e-12)

    def test_too_few(self, small_fit):
        _, test, models, _ = small_fit
        with pytest.raises(InputError):
            predict_mean(models, test.X, len(models) + 1)


class TestSgd:
    def _lin(self, n=25, seed=0):
        r = np.random.default_rng(seed)
        X = r.standard_normal((n, 3))
        y = X @ [1.0, -0.5, 2.0] + 0.3 + 0.1 * r.standard_normal(n)
        return Dataset(X, y)

    def test_zero_lr(self):
        ds = self._lin()
        init = MlpModel([np.ones((2, 3)), np.ones((1, 2))], [np.zeros(2), np.zeros(1)])
        m, _ = sgd_mlp_train(ds, (2,), lr=0.0, epochs=3, batch=7, init_model=init)
        for a, b in zip(m.weights + m.biases, init.weights + init.biases):
            np.testing.assert_array_equal(a, b)

    @pytest.mark.parametrize("momentum", [0.0, 0.6])
    def test_full_batch_linear_recurrence(self, momentum):
        ds = self._lin()
        w = np.array([0.2, -0.1, 0.4])
        b = 0.05
        init = MlpModel([w[None, :].copy()], [np.array([b])])
        lr, T = 0.05, 30
        m, traces = sgd_mlp_train(ds, (), lr=lr, momentum=momentum, epochs=T, batch=ds.n,
                                  init_model=init)
        vw, vb = np.zeros(3), 0.0
        for _ in range(T):
            r = ds.X @ w + b - ds.y
            gw, gb = 2 * ds.X.T @ r / ds.n, 2 * r.mean()
            vw, vb = momentum * vw - lr * gw, momentum * vb - lr * gb
            w, b = w + vw, b + vb
        np.testing.assert_allclose(m.weights[0][0], w, atol=1e-10)
        np.testing.assert_allclose(m.biases[0][0], b, atol=1e-10)
        np.testing.assert_allclose(traces[-1].train_metric, np.mean((ds.X @ w + b - ds.y) ** 2),
                                   rtol=1e-9)

    def test_l1_shrinks(self):
        ds = self._lin()
        plain, _ = sgd_mlp_train(ds, (), lr=0.02, epochs=100, batch=ds.n)
        pen, _ = sgd_mlp_train(ds, (), lr=0.02, epochs=100, batch=ds.n, lasso_lambda=0.5)
        assert np.abs(pen.weights[0]).sum() < np.abs(plain.weights[0]).sum()

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence(self):
        ds = self._lin()
        with pytest.raises(DivergenceError):
            sgd_mlp_train(ds, (4,), lr=1e6, epochs=50, batch=5)
