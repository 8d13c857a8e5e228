"""scikit-learn wrapper: fit a small MLP regressor with zeroth-order updates."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .estimators import KINDS, EstimatorConfig
from .objectives import Dataset, MlpModel
from .optimizers import make_config, run_trajectory
from .rng import RngStream
from .validation import (check_hidden, check_inputs, check_positive, check_seed,
                         check_training_data, check_unit_interval)

FAMILIES = ("ZOGD", "ZOGDM", "ZOAdam")


class ZOMLPRegressor(RegressorMixin, BaseEstimator):
    """MLP regressor trained only from loss evaluations.

    ``eta=None`` picks eta = eta_ratio * 2 / tr(H0), with the Hessian trace at
    the initial weights estimated from HVPs.  Inputs are used as given; scale
    them beforehand.
    """

    def __init__(self, hidden_layer_sizes=(16,), activation="tanh", optimizer="ZOGD",
                 eta=None, eta_ratio=0.2, beta=0.9, mu=1e-3, estimator="central_gaussian",
                 queries=1, max_iter=2000, init_scale=1.0, random_state=None):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.activation = activation
        self.optimizer = optimizer
        self.eta = eta
        self.eta_ratio = eta_ratio
        self.beta = beta
        self.mu = mu
        self.estimator = estimator
        self.queries = queries
        self.max_iter = max_iter
        self.init_scale = init_scale
        self.random_state = random_state

    def _check_params(self):
        if self.optimizer not in FAMILIES:
            raise ValueError(f"optimizer must be one of {FAMILIES}, got {self.optimizer!r}")
        if self.estimator not in KINDS:
            raise ValueError(f"estimator must be one of {KINDS}, got {self.estimator!r}")
        if self.activation not in ("tanh", "gelu"):
            raise ValueError(f"activation must be 'tanh' or 'gelu', got {self.activation!r}")
        check_positive("max_iter", self.max_iter, integer=True)
        check_positive("mu", self.mu)
        check_positive("init_scale", self.init_scale)
        check_positive("queries", self.queries, integer=True)
        if self.eta is None:
            check_positive("eta_ratio", self.eta_ratio)
        else:
            check_positive("eta", self.eta)
        check_unit_interval("beta", self.beta)
        return check_hidden(self.hidden_layer_sizes), check_seed(self.random_state)

    def fit(self, X, y):
        hidden, seed = self._check_params()
        X, Y, flat = check_training_data(X, y)
        widths = (X.shape[1],) + hidden + (Y.shape[1],)
        data = Dataset(X, Y)
        model = MlpModel.init(widths, self.activation, RngStream(seed, 2), self.init_scale, data)
        x0 = model.params.copy()
        eta = self.eta
        if eta is None:
            probes = RngStream(seed, 4).rademacher(model.dim, 64)
            tr = float(np.mean(np.sum(probes * model.hvp(x0, probes), axis=0)))
            if not tr > 0:
                raise ValueError("initial Hessian trace is not positive; pass eta explicitly")
            eta = self.eta_ratio * 2.0 / tr
        if self.optimizer == "ZOGD":
            opt = make_config("ZOGD", eta=eta)
        elif self.optimizer == "ZOGDM":
            opt = make_config("ZOGDM", eta=eta, beta=self.beta)
        else:
            opt = make_config("ZOAdam", eta=eta, beta1=self.beta)
        q = self.queries if self.estimator == "multi_query" else 1
        est = EstimatorConfig(self.estimator, self.mu, q)
        rec = run_trajectory(opt, est, model, x0, int(self.max_iter), RngStream(seed, 3))
        if rec.diverged:
            raise RuntimeError(f"training diverged after {rec.steps} steps; lower eta")
        model.params = rec.final_state.x.copy()
        self.model_ = model
        self.eta_ = float(eta)
        self.loss_curve_ = rec.loss
        self.n_iter_ = rec.steps
        self.n_features_in_ = X.shape[1]
        self.n_outputs_ = Y.shape[1]
        self._flat = flat
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_inputs(X, self.n_features_in_)
        out = self.model_.predict(X)
        return out[:, 0] if self._flat else out
