"""Hand-built models for unit tests."""

import numpy as np

from kstonet.model import DenseLayer, KStoNetModel, NetConfig
from kstonet.svr import SvrModel


def random_model(seed=0, n=12, p=3, widths=(3, 2), task="regression", activation="tanh",
                 sigma_sq=None, c_noise=10.0, eps_noise=0.01, gamma=0.5, stats=False):
    """Random K-StoNet with dual coefficients summing to zero in every unit."""
    r = np.random.default_rng(seed)
    X = r.standard_normal((n, p))
    units = []
    for _ in range(widths[0]):
        d = r.standard_normal(n)
        d -= d.mean()
        sup = np.flatnonzero(d)
        units.append(SvrModel(d, float(r.standard_normal()), sup, sup, X, gamma, 10.0, 0.01))
    if sigma_sq is None:
        sigma_sq = tuple(0.05 * (k + 1) for k in range(len(widths)))
    net = NetConfig(hidden_widths=widths, task=task, activation=activation, sigma_sq=sigma_sq,
                    c_noise=c_noise, eps_noise=eps_noise)
    dense = []
    full = net.widths
    for a, b in zip(full, full[1:]):
        W = r.uniform(-1.5, 1.5, size=(b, a))
        rv = r.uniform(0.05, 0.3, size=b) if stats else None
        G = None
        if stats:
            D = np.column_stack([r.standard_normal((40, a)), np.ones(40)])
            G = D.T @ D
        dense.append(DenseLayer(W, r.standard_normal(b), rv, G))
    return KStoNetModel(tuple(units), tuple(dense), net)


def straight_forward(model, x):
    """Independent scalar loop evaluation of the noise-free network."""
    psi = {"tanh": np.tanh, "identity": lambda v: v,
           "sigmoid": lambda v: 1 / (1 + np.exp(-v)),
           "softplus": lambda v: np.log1p(np.exp(v))}[model.config.activation.value]
    z = []
    for u in model.svr_layer:
        s = u.bias
        for i in range(u.train_X.shape[0]):
            s += u.dual_coefs[i] * np.exp(-u.gamma * np.sum((u.train_X[i] - x) ** 2))
        z.append(s)
    outs = [np.array(z)]
    for layer in model.dense_layers:
        prev = outs[-1]
        nxt = []
        for j in range(layer.weight.shape[0]):
            s = layer.bias[j]
            for k in range(prev.size):
                s += layer.weight[j, k] * psi(prev[k])
            nxt.append(s)
        outs.append(np.array(nxt))
    return outs
