"""scos: blood-flow waveform extraction from speckle contrast traces with
adaptive refinement of the camera-noise calibration, plus a synthetic
ground-truth generator and sweep analysis used to verify the pipeline end to
end."""

__version__ = "0.1.0"

from .analysis import (
    SweepPoint,
    SweepStudyResult,
    ThresholdFit,
    fidelity,
    fit_threshold,
    run_sweep_study,
)
from .calib import (
    CalibConfig,
    CalibrationResult,
    GridOracleResult,
    calibrate,
    grid_oracle,
    loss,
    loss_gradient,
)
from .contrast import StatsConfig, frame_k_raw_sq, stack_to_trace
from .errors import ScosError
from .estimator import NoiseCalibrator
from .noise import (
    HemoSignals,
    NoiseParams,
    cbf_from_kf2,
    cbv_from_intensity,
    derive_hemo,
    subtract_noise,
)
from .sigproc import FilterConfig, highpass, pearson, vfsi
from .synth import (
    SynthDataset,
    SynthSpec,
    generate,
    generate_frames,
    low_signal_scenario,
    signal_sweep,
)
from .trace import (
    FrameStack,
    Trace,
    TraceMeta,
    TracePoint,
    load_frame_stack,
    load_trace,
    save_frame_stack,
    save_trace,
)

__all__ = [
    "CalibConfig",
    "CalibrationResult",
    "FilterConfig",
    "FrameStack",
    "GridOracleResult",
    "HemoSignals",
    "NoiseCalibrator",
    "NoiseParams",
    "ScosError",
    "StatsConfig",
    "SweepPoint",
    "SweepStudyResult",
    "SynthDataset",
    "SynthSpec",
    "ThresholdFit",
    "Trace",
    "TraceMeta",
    "TracePoint",
    "calibrate",
    "cbf_from_kf2",
    "cbv_from_intensity",
    "derive_hemo",
    "fidelity",
    "fit_threshold",
    "frame_k_raw_sq",
    "generate",
    "generate_frames",
    "grid_oracle",
    "highpass",
    "load_frame_stack",
    "load_trace",
    "loss",
    "loss_gradient",
    "low_signal_scenario",
    "pearson",
    "run_sweep_study",
    "save_frame_stack",
    "save_trace",
    "signal_sweep",
    "stack_to_trace",
    "subtract_noise",
    "vfsi",
]
