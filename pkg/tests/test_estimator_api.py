import numpy as np
import pytest
from sklearn.base import clone

from zostab import ZOMLPRegressor


def data(n=48):
    r = np.random.default_rng(0)
    X = r.standard_normal((n, 3))
    y = np.tanh(X @ np.array([1.0, -0.5, 0.3]))
    return X, y


def test_fit_predict_reduces_loss():
    X, y = data()
    m = ZOMLPRegressor(hidden_layer_sizes=(8,), max_iter=3000, random_state=0).fit(X, y)
    assert m.predict(X).shape == (48,)
    assert m.loss_curve_[-1] < 0.5 * m.loss_curve_[0]
    assert m.n_features_in_ == 3 and m.n_iter_ == 3000 and m.eta_ > 0


def test_multi_output_and_determinism():
    X, y = data()
    Y = np.column_stack([y, -y])
    a = ZOMLPRegressor(max_iter=50, random_state=3, optimizer="ZOGDM", eta=0.005).fit(X, Y)
    b = ZOMLPRegressor(max_iter=50, random_state=3, optimizer="ZOGDM", eta=0.005).fit(X, Y)
    assert a.predict(X).shape == (48, 2)
    assert np.array_equal(a.predict(X), b.predict(X))


def test_params_and_clone():
    m = ZOMLPRegressor(eta=0.01, optimizer="ZOAdam")
    c = clone(m)
    assert c.get_params() == m.get_params()
    c.set_params(max_iter=5)
    assert c.max_iter == 5 and m.max_iter == 2000


@pytest.mark.parametrize("kw", [{"optimizer": "SGD"}, {"eta": -1.0}, {"beta": 1.0}, {"max_iter": 0},
                                {"hidden_layer_sizes": (0,)}, {"random_state": -1}, {"estimator": "x"}])
def test_bad_params(kw):
    X, y = data()
    with pytest.raises(ValueError):
        ZOMLPRegressor(**kw).fit(X, y)


def test_input_validation():
    X, y = data()
    with pytest.raises(ValueError):
        ZOMLPRegressor().fit(X, y[:-1])
    m = ZOMLPRegressor(max_iter=5, random_state=0).fit(X, y)
    with pytest.raises(ValueError):
        m.predict(X[:, :2])
    with pytest.raises(Exception):
        ZOMLPRegressor().predict(X)


def test_divergence_raises():
    X, y = data()
    with pytest.raises(RuntimeError):
        ZOMLPRegressor(eta=50.0, max_iter=500, random_state=0).fit(X, y)
