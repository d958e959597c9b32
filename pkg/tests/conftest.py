import json
import sys
from pathlib import Path

import numpy as np
import pytest

HERE = Path(__file__).parent
sys.path.insert(0, str(HERE))


@pytest.fixture(scope="session")
def frozen():
    return json.loads((HERE / "oracles" / "frozen.json").read_text())


@pytest.fixture(scope="session")
def small_fit():
    """A short IRO run on the measurement-error data, shared by several modules."""
    from kstonet import NetConfig, TrainConfig, HmcConfig, SvrConfig, gen_measurement_error, iro_train

    train = gen_measurement_error(80, seed=3)
    test = gen_measurement_error(40, seed=4)
    net = NetConfig(hidden_widths=(4, 3), c_noise=5.0, eps_noise=0.05, sigma_sq=(0.01, 0.05))
    cfg = TrainConfig(epochs=4, hmc=HmcConfig(steps=5, lr=1e-3, seed=1),
                      svr=SvrConfig(cost=2.0, epsilon=0.05), seed=1)
    models, traces = iro_train(train, net, cfg, test)
    return train, test, models, traces


def rng(seed=0):
    return np.random.default_rng(seed)
