"""How the SVR tube half-width controls first-layer sparsity.

A wider insensitive tube leaves more training points strictly inside it,
so fewer points carry nonzero dual weight.  This script trains the same
network at several tube widths and prints the mean support-vector count.

Run: python3 demos/epsilon_sparsity.py  (a few minutes)
"""

import numpy as np

from kstonet import HmcConfig, NetConfig, SvrConfig, TrainConfig, gen_measurement_error, iro_train

train = gen_measurement_error(300, seed=3)
print("epsilon  mean_sv  train_mse")
for eps in (0.01, 0.03, 0.1):
    net = NetConfig(hidden_widths=(5,), c_noise=1.0, eps_noise=eps, sigma_sq=(0.001,))
    cfg = TrainConfig(epochs=30, hmc=HmcConfig(steps=25, lr=5e-5, alpha=1.0),
                      svr=SvrConfig(cost=1.0, epsilon=eps), seed=0)
    _, traces = iro_train(train, net, cfg)
    print(f"{eps:7.2f}  {np.mean(traces[-1].sv_counts):7.1f}  {traces[-1].train_metric:9.3f}")
