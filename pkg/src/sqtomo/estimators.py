"""scikit-learn style wrappers around the ST-POVM estimator and the scaling fit.

These are thin adapters; the numerics live in :mod:`povm` and :mod:`fitkit`.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .fitkit import MseCurve, fit_scaling_model
from .noisekit import mitigate
from .povm import StPovmParams, build_estimator, estimate_from_frequencies


def _as_frequency_rows(X) -> np.ndarray:
    X = check_array(X, dtype=float, ensure_2d=True)
    if X.shape[1] != 4:
        raise ValueError(f"expected 4 outcome columns, got {X.shape[1]}")
    if np.any(X < 0):
        raise ValueError("counts and frequencies must be non-negative")
    totals = X.sum(axis=1, keepdims=True)
    if np.any(totals <= 0):
        raise ValueError("every row needs at least one recorded outcome")
    return X / totals


def _outcome_counts(outcomes) -> np.ndarray:
    idx = np.asarray(outcomes)
    if idx.ndim != 1:
        raise ValueError("outcome indices must be one-dimensional")
    if idx.size == 0 or np.any((idx < 0) | (idx > 3)) or not np.all(idx == np.round(idx)):
        raise ValueError("outcome indices must be integers in 0..3")
    return np.bincount(idx.astype(np.int64), minlength=4)[None, :]


class StTomography(TransformerMixin, BaseEstimator):
    """Linear ST-POVM tomography as a transformer.

    ``fit`` takes a 1-D array of outcome indices (a shot record) and stores
    the pooled estimate in ``theta_``. ``transform`` maps rows of counts or
    frequencies, shape ``(n, 4)``, to Bloch-vector estimates ``(n, 3)``.

    Parameters
    ----------
    r_p : float
        Stretching parameter, ``0 <= r_p < 1``.
    phi : float
        Azimuth of the tetrahedron legs about the POVM axis.
    orientation : tuple of float
        Lab-frame direction of the POVM axis.
    confusion : ConfusionMatrix, optional
        Readout confusion matrix inverted before estimation.
    """

    def __init__(self, r_p=0.0, phi=0.0, orientation=(0.0, 0.0, 1.0), confusion=None):
        self.r_p = r_p
        self.phi = phi
        self.orientation = orientation
        self.confusion = confusion

    def _estimate(self, freqs):
        if self.confusion is not None:
            freqs = mitigate(freqs, self.confusion)
        return estimate_from_frequencies(self.estimator_, freqs)

    def fit(self, X, y=None):
        params = StPovmParams(float(self.r_p), float(self.phi), tuple(self.orientation))
        self.params_ = params
        self.estimator_ = build_estimator(params)
        counts = _outcome_counts(X)
        self.n_shots_ = int(counts.sum())
        self.theta_ = self._estimate(counts / self.n_shots_)[0]
        return self

    def transform(self, X):
        check_is_fitted(self, "estimator_")
        return self._estimate(_as_frequency_rows(X))

    def score(self, X, y):
        """Negative mean squared Bloch-vector error against true vectors ``y``."""
        theta = np.asarray(y, dtype=float).reshape(-1, 3)
        return -float(((self.transform(X) - theta) ** 2).sum(axis=1).mean())


class ScalingModelRegressor(RegressorMixin, BaseEstimator):
    """Weighted fit of ``N MSE(N) = C + N delta``.

    ``X`` holds group sizes (one column), ``y`` the scaled MSE and
    ``std_err`` its standard errors; ``predict`` returns the scaled MSE.
    """

    def fit(self, X, y, std_err=None):
        n = check_array(X, dtype=float, ensure_2d=False).reshape(-1)
        y = np.asarray(y, dtype=float).reshape(-1)
        if std_err is None:
            raise ValueError("std_err is required: the fit weights by 1 / std_err^2")
        se = np.asarray(std_err, dtype=float).reshape(-1)
        if not len(n) == len(y) == len(se):
            raise ValueError("X, y and std_err must have the same length")
        self.fit_ = fit_scaling_model(MseCurve.from_arrays(n, y, se))
        self.c_, self.delta_ = self.fit_.c, self.fit_.delta
        self.c_err_, self.delta_err_ = self.fit_.c_err, self.fit_.delta_err
        return self

    def predict(self, X):
        check_is_fitted(self, "fit_")
        n = check_array(X, dtype=float, ensure_2d=False).reshape(-1)
        return self.c_ + n * self.delta_
