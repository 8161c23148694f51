"""Scikit-learn style front end for the noise calibrator.

Wraps the functional pipeline in a fit/transform estimator so the algorithm
composes with sklearn tooling (pipelines, clone, get_params grid search).
Samples are rows of a two-column array: raw contrast squared and mean
intensity in ADU, at a fixed sampling rate given at construction.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .calib import CalibConfig, calibrate
from .noise import NoiseParams, derive_hemo
from .sigproc import FilterConfig, vfsi
from .trace import Trace, TraceMeta


def trace_from_array(X: np.ndarray, sampling_rate_hz: float, label: str = "") -> Trace:
    """Build a validated Trace from an (n_samples, 2) array of
    (k_raw_sq, mean_intensity) rows."""
    arr = validate_trace_array(X)
    n = arr.shape[0]
    meta = TraceMeta(
        sampling_rate_hz=sampling_rate_hz,
        duration_s=n / sampling_rate_hz,
        source_label=label,
    )
    return Trace(
        meta=meta,
        t=np.arange(n, dtype=np.float64) / sampling_rate_hz,
        k_raw_sq=arr[:, 0],
        mean_intensity=arr[:, 1],
    )


def validate_trace_array(X) -> np.ndarray:
    """Check an estimator input: 2-D, two columns, finite, contrast >= 0 and
    intensity > 0. Returns a float64 copy."""
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(
            f"expected an (n_samples, 2) array of (k_raw_sq, mean_intensity), "
            f"got shape {arr.shape}"
        )
    if arr.shape[0] < 2:
        raise ValueError("need at least 2 samples")
    if not np.all(np.isfinite(arr)):
        raise ValueError("input contains non-finite values")
    if np.any(arr[:, 0] < 0):
        raise ValueError("k_raw_sq column must be >= 0")
    if np.any(arr[:, 1] <= 0):
        raise ValueError("mean_intensity column must be > 0")
    return arr.copy()


class NoiseCalibrator(BaseEstimator, TransformerMixin):
    """Refines camera gain and noise variance on a contrast trace, then
    derives decorrelated blood-flow waveforms.

    Parameters
    ----------
    sampling_rate_hz : float
        Sample rate of the rows of X.
    gain_prior, cam_var_prior : float
        Starting calibration (ADU per photoelectron, ADU^2). Zero priors
        auto-calibrate from the data alone.
    max_iterations, learning_rate : optimizer budget and step size.
    highpass_cutoff_hz, filter_order : waveform high-pass design.
    kf2_floor : reciprocal floor for the flow contrast.
    nonneg_projection : keep both parameters nonnegative during descent.

    Attributes
    ----------
    gain_ : float
        Calibrated gain after fit.
    cam_var_ : float
        Calibrated camera noise variance after fit.
    vfsi_ : float
        Volume-flow similarity index at the calibrated parameters.
    result_ : CalibrationResult
        Full optimizer record.
    """

    def __init__(
        self,
        sampling_rate_hz: float = 60.0,
        gain_prior: float = 0.0,
        cam_var_prior: float = 0.0,
        max_iterations: int = 500,
        learning_rate: float = 0.01,
        highpass_cutoff_hz: float = 0.5,
        filter_order: int = 4,
        kf2_floor: float = 1e-6,
        nonneg_projection: bool = True,
    ):
        self.sampling_rate_hz = sampling_rate_hz
        self.gain_prior = gain_prior
        self.cam_var_prior = cam_var_prior
        self.max_iterations = max_iterations
        self.learning_rate = learning_rate
        self.highpass_cutoff_hz = highpass_cutoff_hz
        self.filter_order = filter_order
        self.kf2_floor = kf2_floor
        self.nonneg_projection = nonneg_projection

    def _configs(self) -> tuple[CalibConfig, FilterConfig]:
        calib_cfg = CalibConfig(
            max_iterations=self.max_iterations,
            learning_rate=self.learning_rate,
            kf2_floor=self.kf2_floor,
            nonneg_projection=self.nonneg_projection,
        )
        filter_cfg = FilterConfig(
            highpass_cutoff_hz=self.highpass_cutoff_hz,
            filter_order=self.filter_order,
        )
        return calib_cfg, filter_cfg

    def fit(self, X, y=None):
        """Calibrate the noise parameters on X; returns self."""
        trace = trace_from_array(X, self.sampling_rate_hz)
        calib_cfg, filter_cfg = self._configs()
        priors = NoiseParams(self.gain_prior, self.cam_var_prior)
        result = calibrate(trace, priors, calib_cfg, filter_cfg)
        self.result_ = result
        self.gain_ = result.params_opt.gain_adu_per_e
        self.cam_var_ = result.params_opt.cam_var_adu2
        self.vfsi_ = result.vfsi_final
        self.n_features_in_ = 2
        return self

    def transform(self, X) -> np.ndarray:
        """Derived waveforms at the fitted calibration.

        Returns an (n_samples, 4) array with columns cbf, cbv, cbf_hp,
        cbv_hp.
        """
        check_is_fitted(self, "gain_")
        trace = trace_from_array(X, self.sampling_rate_hz)
        _, filter_cfg = self._configs()
        hemo = derive_hemo(
            trace,
            NoiseParams(max(self.gain_, 0.0), max(self.cam_var_, 0.0)),
            filter_cfg,
            kf2_floor=self.kf2_floor,
        )
        return np.column_stack((hemo.cbf, hemo.cbv, hemo.cbf_hp, hemo.cbv_hp))

    def predict(self, X) -> np.ndarray:
        """Calibrated blood-flow waveform (reciprocal flow contrast) for X."""
        return self.transform(X)[:, 0]

    def score(self, X, y=None) -> float:
        """Negative VFSI^2 on X at the fitted calibration (higher is better)."""
        check_is_fitted(self, "gain_")
        trace = trace_from_array(X, self.sampling_rate_hz)
        _, filter_cfg = self._configs()
        hemo = derive_hemo(
            trace,
            NoiseParams(max(self.gain_, 0.0), max(self.cam_var_, 0.0)),
            filter_cfg,
            kf2_floor=self.kf2_floor,
        )
        value = vfsi(
            hemo.cbf_hp, hemo.cbv_hp, self.sampling_rate_hz, filter_cfg,
            assume_filtered=True,
        )
        return -(value**2)
