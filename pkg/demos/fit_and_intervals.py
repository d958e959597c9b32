"""Fit a kernel-expanded stochastic network and attach prediction intervals.

Run: python3 demos/fit_and_intervals.py  (about a minute)
"""

import numpy as np

from kstonet import (HmcConfig, NetConfig, SvrConfig, TrainConfig, gen_measurement_error,
                     interval, iro_train, predict_mean)
from kstonet.uq import coverage

# Five equicorrelated inputs observed with additive error; the response is a
# smooth nonlinear function of the error-free inputs.
train = gen_measurement_error(300, seed=1)
test = gen_measurement_error(200, seed=2)

# One RBF-SVR hidden layer of five units followed by a linear output.  Each
# epoch imputes the latent layer outputs with a few Langevin steps and then
# refits every layer on the imputed values.
net = NetConfig(hidden_widths=(5,), c_noise=10.0, eps_noise=0.05, sigma_sq=(0.001,))
cfg = TrainConfig(epochs=20, hmc=HmcConfig(steps=25, lr=5e-6, alpha=0.1),
                  svr=SvrConfig(cost=10.0, epsilon=0.05), ols=True, seed=0)
models, traces = iro_train(train, net, cfg, test)

print("epoch  train_mse  test_mse  mean_sv")
for t in traces[::4] + [traces[-1]]:
    print(f"{t.epoch:5d}  {t.train_metric:9.3f}  {t.test_metric:8.3f}  {np.mean(t.sv_counts):7.1f}")

# Interval variance: mean squared training residual plus the output
# covariance propagated from the SVR posterior through the dense layers.
iv = interval(models, train.X, train.y, test.X, level=0.95)
resid, prop = iv.variance_components
print(f"\nresidual variance {resid.mean():.3f}, propagated variance {prop.mean():.4f}")
print(f"mean half-width {iv.half_width.mean():.3f}")
print(f"empirical coverage of nominal 95%: {100 * coverage(iv, test.y).mean():.1f}%")

center = predict_mean(models, test.X[:3])
for c, lo, hi, y in zip(center, iv.lower[:3], iv.upper[:3], test.y[:3]):
    print(f"  prediction {c:6.2f}  interval [{lo:6.2f}, {hi:6.2f}]  observed {y:6.2f}")
