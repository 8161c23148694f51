"""Forward model: noise-term subtraction, CBF construction and the CBV proxy.

Measured raw contrast is a composite of the flow-induced term plus shot-noise
and camera-noise contributions, K_shot^2 = g / <I> and K_cam^2 =
sigma_cam^2 / <I>^2. Subtracting those with calibrated (g, sigma_cam^2)
isolates the flow contrast K_f^2; blood flow index is its reciprocal, and the
blood-volume proxy is the optical-density change ln(I0 / <I>) (Beer-Lambert,
intensity drop means volume up). All functions here are pure and
deterministic: identical inputs give bit-identical outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NonPositiveBaseline, TooShort
from .sigproc import FilterConfig, highpass
from .trace import Trace, TraceMeta


@dataclass(frozen=True)
class NoiseParams:
    """Camera noise calibration: gain in ADU per photoelectron and read/dark
    noise variance in ADU^2. The public constructor rejects negative values;
    optimizer internals work on raw floats until a result is built."""

    gain_adu_per_e: float
    cam_var_adu2: float

    def __post_init__(self):
        for name in ("gain_adu_per_e", "cam_var_adu2"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and >= 0, got {v}")


def unchecked_noise_params(gain_adu_per_e: float, cam_var_adu2: float) -> NoiseParams:
    """Build NoiseParams without the nonnegativity check.

    Only for reporting optimizer iterates when the nonnegativity projection
    is disabled; values must still be finite.
    """
    if not (math.isfinite(gain_adu_per_e) and math.isfinite(cam_var_adu2)):
        raise ValueError("noise parameters must be finite")
    obj = object.__new__(NoiseParams)
    object.__setattr__(obj, "gain_adu_per_e", float(gain_adu_per_e))
    object.__setattr__(obj, "cam_var_adu2", float(cam_var_adu2))
    return obj


@dataclass(frozen=True, eq=False)
class HemoSignals:
    """Derived hemodynamic waveforms for one trace.

    cbf is the blood flow index 1 / K_f^2 (arbitrary units), cbv the
    optical-density change, with _hp their high-passed forms. floored_count
    reports how many samples hit the reciprocal floor.
    """

    cbf: np.ndarray
    cbv: np.ndarray
    cbf_hp: np.ndarray
    cbv_hp: np.ndarray
    meta: TraceMeta
    floored_count: int = 0

    def __post_init__(self):
        n = self.cbf.size
        for name in ("cbv", "cbf_hp", "cbv_hp"):
            if getattr(self, name).size != n:
                raise ValueError("all HemoSignals sequences must share one length")
        if not np.all(np.isfinite(self.cbf)):
            raise ValueError("cbf contains non-finite samples")
        for name in ("cbf", "cbv", "cbf_hp", "cbv_hp"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


def flow_contrast_sq(
    k_raw_sq: np.ndarray,
    mean_intensity: np.ndarray,
    gain_adu_per_e: float,
    cam_var_adu2: float,
) -> np.ndarray:
    """Array core of subtract_noise: K_raw^2 - g/<I> - sigma^2/<I>^2."""
    inv_i = 1.0 / np.asarray(mean_intensity, dtype=np.float64)
    return (
        np.asarray(k_raw_sq, dtype=np.float64)
        - gain_adu_per_e * inv_i
        - cam_var_adu2 * inv_i * inv_i
    )


def subtract_noise(trace: Trace, params: NoiseParams) -> np.ndarray:
    """Per-sample flow contrast squared after noise-term subtraction.

    The result may be nonpositive when the parameters over-subtract; callers
    decide how to handle that (see cbf_from_kf2).
    """
    return flow_contrast_sq(
        trace.k_raw_sq, trace.mean_intensity, params.gain_adu_per_e, params.cam_var_adu2
    )


def cbf_from_kf2(kf2: np.ndarray, floor: float = 1e-6) -> tuple[np.ndarray, int]:
    """Blood flow index 1 / max(K_f^2, floor).

    Returns the waveform and the number of floored samples; flooring keeps the
    reciprocal finite during optimization and is reported, never fatal.
    """
    if floor <= 0:
        raise ValueError("floor must be > 0")
    arr = np.asarray(kf2, dtype=np.float64)
    floored = int(np.count_nonzero(arr < floor))
    return 1.0 / np.maximum(arr, floor), floored


def cbv_from_intensity(trace: Trace, i0: float | None = None) -> np.ndarray:
    """Blood-volume proxy: optical-density change ln(i0 / <I>) per sample.

    i0 defaults to the trace-mean intensity, which makes the result invariant
    under uniform intensity rescaling; pass an explicit baseline to share one
    across traces.
    """
    inten = trace.mean_intensity
    if i0 is None:
        i0 = float(inten.mean())
    if not (math.isfinite(i0) and i0 > 0):
        raise NonPositiveBaseline(f"baseline intensity must be > 0, got {i0}")
    return np.log(i0) - np.log(inten)


def minimum_trace_length(sampling_rate_hz: float, filter_cfg: FilterConfig) -> int:
    """Samples required before hemodynamic processing is meaningful."""
    return int(math.ceil(4.0 * sampling_rate_hz / filter_cfg.highpass_cutoff_hz))


def derive_hemo(
    trace: Trace,
    params: NoiseParams,
    filter_cfg: FilterConfig = FilterConfig(),
    kf2_floor: float = 1e-6,
    i0: float | None = None,
) -> HemoSignals:
    """Full per-trace pipeline: subtract noise, invert, high-pass, plus CBV.

    Raises TooShort when the trace cannot support the configured filter
    (fewer than 4 x sampling_rate / cutoff samples).
    """
    n_min = minimum_trace_length(trace.meta.sampling_rate_hz, filter_cfg)
    if len(trace) < n_min:
        raise TooShort(
            f"trace of {len(trace)} samples is below the filtering minimum {n_min}"
        )
    kf2 = subtract_noise(trace, params)
    cbf, floored = cbf_from_kf2(kf2, kf2_floor)
    cbv = cbv_from_intensity(trace, i0)
    fs = trace.meta.sampling_rate_hz
    return HemoSignals(
        cbf=cbf,
        cbv=cbv,
        cbf_hp=highpass(cbf, fs, filter_cfg),
        cbv_hp=highpass(cbv, fs, filter_cfg),
        meta=trace.meta,
        floored_count=floored,
    )
