"""High-pass filtering, Pearson correlation and the volume-flow similarity index.

The VFSI is the Pearson correlation between the high-passed blood-flow and
blood-volume waveforms; its square serves as the calibration loss. The filter
is a Butterworth high-pass realized as cascaded second-order sections and,
by default, applied forward-backward for zero phase, with reflective edge
padding of 3 x (order + 1) samples. The 0.5 Hz default cutoff passes all
plausible human heart rates while rejecting respiratory and baseline drift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import butter, sosfilt, sosfilt_zi, sosfiltfilt

from .errors import CutoffAboveNyquist, LengthMismatch, TooShort, ZeroVariance


@dataclass(frozen=True)
class FilterConfig:
    """High-pass filter design parameters.

    Attributes:
        highpass_cutoff_hz: -3 dB corner frequency (must stay below Nyquist
            at application time).
        filter_order: Butterworth order, even and >= 2.
        zero_phase: Apply forward-backward (squares the magnitude response,
            cancels phase); single forward pass otherwise.
    """

    highpass_cutoff_hz: float = 0.5
    filter_order: int = 4
    zero_phase: bool = True

    def __post_init__(self):
        if not (math.isfinite(self.highpass_cutoff_hz) and self.highpass_cutoff_hz > 0):
            raise ValueError("highpass_cutoff_hz must be > 0")
        if self.filter_order < 2 or self.filter_order % 2:
            raise ValueError("filter_order must be even and >= 2")


def _design_sos(sampling_rate_hz: float, cfg: FilterConfig) -> np.ndarray:
    if sampling_rate_hz <= 0:
        raise ValueError("sampling_rate_hz must be > 0")
    if cfg.highpass_cutoff_hz >= sampling_rate_hz / 2:
        raise CutoffAboveNyquist(
            f"cutoff {cfg.highpass_cutoff_hz} Hz >= Nyquist {sampling_rate_hz / 2} Hz"
        )
    return butter(
        cfg.filter_order, cfg.highpass_cutoff_hz, btype="highpass",
        fs=sampling_rate_hz, output="sos",
    )


def _pad_len(cfg: FilterConfig) -> int:
    return 3 * (cfg.filter_order + 1)


def highpass(
    x: np.ndarray, sampling_rate_hz: float, cfg: FilterConfig = FilterConfig()
) -> np.ndarray:
    """High-pass filter a sequence, preserving its length.

    The operator is exactly linear in its input (padding and initial
    conditions scale with the data), which downstream gradient code relies on.

    Raises:
        TooShort: fewer samples than the edge-padding requirement.
        CutoffAboveNyquist: cutoff at or above half the sampling rate.
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError("highpass expects a 1-D sequence")
    return highpass_batch(arr[np.newaxis, :], sampling_rate_hz, cfg)[0]


def highpass_batch(
    x: np.ndarray, sampling_rate_hz: float, cfg: FilterConfig = FilterConfig()
) -> np.ndarray:
    """Vectorized highpass over the rows of a 2-D array (shared design)."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("highpass_batch expects a 2-D array")
    sos = _design_sos(sampling_rate_hz, cfg)
    padlen = _pad_len(cfg)
    if arr.shape[1] <= padlen:
        raise TooShort(
            f"need more than {padlen} samples for order-{cfg.filter_order} filtering, "
            f"got {arr.shape[1]}"
        )
    if cfg.zero_phase:
        return sosfiltfilt(sos, arr, axis=-1, padtype="even", padlen=padlen)
    zi = sosfilt_zi(sos)  # steady-state step response scaling
    zi_batch = zi[:, np.newaxis, :] * arr[np.newaxis, :, :1]
    y, _ = sosfilt(sos, arr, axis=-1, zi=zi_batch)
    return y


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    """Sample Pearson correlation coefficient, clamped to [-1, 1].

    Raises:
        LengthMismatch: unequal lengths or fewer than 2 samples.
        ZeroVariance: either argument is exactly constant.
    """
    a = np.asarray(x, dtype=np.float64)
    b = np.asarray(y, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1 or a.size != b.size:
        raise LengthMismatch(f"length mismatch: {a.size} vs {b.size}")
    if a.size < 2:
        raise LengthMismatch("need at least 2 samples")
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        raise ZeroVariance("constant input to pearson")
    da = a - a.mean()
    db = b - b.mean()
    denom = math.sqrt(float(da @ da) * float(db @ db))
    if denom == 0:
        raise ZeroVariance("zero variance input to pearson")
    return float(min(1.0, max(-1.0, float(da @ db) / denom)))


# Relative scale below which a high-passed signal counts as constant.
_DEGENERATE_REL = 1e-12


def _is_degenerate(filtered: np.ndarray, original: np.ndarray) -> bool:
    scale = max(abs(float(np.mean(original))), float(np.std(original)), 1e-300)
    return float(np.std(filtered)) <= _DEGENERATE_REL * scale


def vfsi(
    cbf: np.ndarray,
    cbv: np.ndarray,
    sampling_rate_hz: float,
    cfg: FilterConfig = FilterConfig(),
    *,
    assume_filtered: bool = False,
) -> float:
    """Volume-flow similarity index: correlation of high-passed CBF and CBV.

    With assume_filtered the inputs are taken to be high-passed already and
    filtering is skipped. Raises ZeroVariance when either high-passed signal
    is constant relative to its input scale (a degenerate trace).
    """
    a = np.asarray(cbf, dtype=np.float64)
    b = np.asarray(cbv, dtype=np.float64)
    if a.size != b.size:
        raise LengthMismatch(f"length mismatch: {a.size} vs {b.size}")
    if assume_filtered:
        fa, fb = a, b
    else:
        fa = highpass(a, sampling_rate_hz, cfg)
        fb = highpass(b, sampling_rate_hz, cfg)
    if _is_degenerate(fa, a) or _is_degenerate(fb, b):
        raise ZeroVariance("high-passed signal is constant")
    return pearson(fa, fb)
