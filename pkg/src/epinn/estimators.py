"""scikit-learn style wrapper for the supervised surrogates (mNN, sNN)."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .neural import BoxScaler, MlpSpec, forward
from .training import fit_regressor


class SurrogateRegressor(RegressorMixin, BaseEstimator):
    """Fully connected regressor trained with minibatch ADAM.

    Inputs are mapped to [-1, 1] from the training range; targets are
    standardized. ``y`` may have several columns.
    """

    def __init__(self, hidden=(128, 128, 128), activation="cubic-relu", epochs=100, batch_size=1024, lr=1e-3,
                 random_state=0):
        self.hidden = hidden
        self.activation = activation
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True)
        y2 = y.reshape(len(y), -1).astype(float)
        lo, hi = X.min(axis=0), X.max(axis=0)
        hi = np.where(hi > lo, hi, lo + 1.0)
        self.scaler_ = BoxScaler(tuple(lo), tuple(hi))
        self.y_mean_ = y2.mean(axis=0)
        self.y_std_ = np.where(y2.std(axis=0) > 0, y2.std(axis=0), 1.0)
        self.spec_ = MlpSpec((X.shape[1], *self.hidden, y2.shape[1]), self.activation)
        self.params_ = fit_regressor(self.spec_, self.scaler_(X), (y2 - self.y_mean_) / self.y_std_, self.epochs,
                                     self.batch_size, self.lr, self.random_state)
        self.n_features_in_ = X.shape[1]
        self._single_output = y.ndim == 1
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, the model was fitted with {self.n_features_in_}")
        out = self.y_mean_ + self.y_std_ * forward(self.spec_, self.params_, self.scaler_(X))
        return out[:, 0] if self._single_output else out
