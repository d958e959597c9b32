"""Kernel-expanded stochastic neural networks trained by imputation-regularized optimization."""

from .data import Dataset, gen_full_rank, gen_knn_data, gen_measurement_error, load_csv, split, standardize
from .errors import (ConfigError, ConvergenceError, DivergenceError, InputError, KStoNetError,
                     NumericalError, UnsupportedTaskError)
from .glm import LassoConfig, lasso_fit, logistic_lasso_fit, ols_fit
from .imputation import HmcConfig, LatentState, hmc_impute, impute_all, init_latent, latent_grad
from .kernel import GramCache, KernelSpec, default_gamma, gram, rbf_eval
from .model import (Activation, DenseLayer, KStoNetModel, NetConfig, NoiseDensity, Task, forward,
                    load_models, noise_logpdf, noise_score, save_models)
from .svr import SvrConfig, SvrModel, svr_fit, svr_predict, svr_variance
from .trainer import EpochTrace, TrainConfig, iro_train, predict, predict_mean, sgd_mlp_train
from .uq import PredictionInterval, first_layer_cov, interval, propagate_cov

__version__ = "0.1.0"
