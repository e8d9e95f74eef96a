import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from epinn.estimators import SurrogateRegressor


def data(n=300, seed=0):
    X = np.random.default_rng(seed).uniform([5, 0], [15, 0.12], (n, 2))
    return X, 1e6 * np.exp(-X[:, 0] / 10) * (1 + X[:, 1])


def test_fit_predict_score():
    X, y = data()
    est = SurrogateRegressor(hidden=(32, 32), activation="tanh", epochs=150, batch_size=32, lr=3e-3)
    assert est.fit(X, y) is est
    assert est.predict(X).shape == (300,)
    assert est.score(*data(100, 1)) > 0.98


def test_multi_output():
    X, y = data(60)
    Y = np.column_stack([y, 2 * y])
    est = SurrogateRegressor(hidden=(8,), epochs=2, batch_size=16).fit(X, Y)
    assert est.predict(X).shape == (60, 2)


def test_params_and_clone():
    est = SurrogateRegressor(hidden=(4,), epochs=3)
    assert est.get_params()["hidden"] == (4,)
    c = clone(est.set_params(lr=0.5))
    assert c.lr == 0.5 and not hasattr(c, "params_")


def test_validation():
    est = SurrogateRegressor(hidden=(4,), epochs=1)
    with pytest.raises(NotFittedError):
        est.predict(np.zeros((1, 2)))
    X, y = data(20)
    with pytest.raises(ValueError):
        est.fit(X, y[:-1])
    est.fit(X, y)
    with pytest.raises(ValueError):
        est.predict(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        est.predict([[np.nan, 1.0]])
