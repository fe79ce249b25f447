"""Scikit-learn style front end for the registration engine."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from . import liegroup as lg
from .registration import RegistrationConfig, register


class HandEyeCalibrator(BaseEstimator):
    """Estimate the camera-to-robot-base transform from posed depth observations.

    Parameters mirror RegistrationConfig; `fit` consumes a CalibrationDataset
    (or an explicit model/qs/observed triple) and exposes the result as
    `pose_` (robot base in camera frame) plus the full `report_`.
    """

    def __init__(self, samples_per_link=2000, stride=2, band_px=3,
                 inner_tol=1e-7, max_inner=20, outer_tol=1e-6, max_outer=50,
                 reject_start=0.10, reject_decay=0.7, reject_floor=0.01,
                 residual_threshold=0.005, huber_factor=1.345, seed=0):
        self.samples_per_link = samples_per_link
        self.stride = stride
        self.band_px = band_px
        self.inner_tol = inner_tol
        self.max_inner = max_inner
        self.outer_tol = outer_tol
        self.max_outer = max_outer
        self.reject_start = reject_start
        self.reject_decay = reject_decay
        self.reject_floor = reject_floor
        self.residual_threshold = residual_threshold
        self.huber_factor = huber_factor
        self.seed = seed

    def _config(self) -> RegistrationConfig:
        return RegistrationConfig(
            inner_tol=self.inner_tol, max_inner=self.max_inner,
            outer_tol=self.outer_tol, max_outer=self.max_outer,
            reject_start=self.reject_start, reject_decay=self.reject_decay,
            reject_floor=self.reject_floor, samples_per_link=self.samples_per_link,
            stride=self.stride, band_px=self.band_px, seed=self.seed,
            residual_threshold=self.residual_threshold, huber_factor=self.huber_factor)

    def fit(self, dataset, y=None, *, model=None, qs=None, observed=None):
        """Calibrate from a CalibrationDataset, or from explicit components."""
        if dataset is not None:
            from .datasets import observed_from_dataset
            model = dataset.model
            qs = dataset.qs
            observed = observed_from_dataset(dataset)
        if model is None or qs is None or observed is None:
            raise ValueError("provide a dataset or model/qs/observed")
        self.report_ = register(model, qs, observed, self._config())
        self.pose_ = self.report_.pose
        return self

    def transform(self, X):
        """Map robot-base-frame points (n, 3) into the camera frame."""
        check_is_fitted(self, "pose_")
        X = check_array(X, ensure_min_features=3)
        if X.shape[1] != 3:
            raise ValueError("expected (n, 3) points")
        return lg.apply(self.pose_, X)

    def inverse_transform(self, X):
        """Map camera-frame points (n, 3) into the robot base frame."""
        check_is_fitted(self, "pose_")
        X = check_array(X, ensure_min_features=3)
        return lg.apply(lg.inverse(self.pose_), X)

    @property
    def converged_(self) -> bool:
        check_is_fitted(self, "report_")
        return self.report_.converged

    def pose_matrix_(self) -> np.ndarray:
        check_is_fitted(self, "pose_")
        return self.pose_.matrix()
