"""Adaptive refinement of camera-noise calibration by descent on VFSI^2.

Residual errors in the pre-calibrated gain and camera-noise variance leave
intensity-dependent terms inside the flow contrast. Because detected
intensity is modulated by blood volume, those residuals imprint a
volume-like waveform onto the derived blood flow; the loss minimized here is
the squared correlation between the high-passed flow and volume waveforms.
Each iteration re-subtracts the noise terms with the current parameters,
rebuilds the flow waveform, measures VFSI, and updates the two parameters
with Adam. The volume waveform is extracted once, up front, since it does
not depend on the parameters.

Optimization runs in scaled coordinates u = g / S_g, v = sigma^2 / S_s with
S_g = mean(K_raw^2) * mean(<I>) and S_s = mean(K_raw^2) * mean(<I>)^2, so a
unit move in either coordinate shifts the subtracted contrast by the same
order of magnitude; the raw parameters differ by orders of magnitude and
stall a shared-step optimizer.

The returned parameters are those of the best-loss iterate seen (the loss is
non-convex and a fixed-rate optimizer overshoots), and a run that never beats
the loss at the priors returns the priors unchanged with a flag: calibration
may refine, never degrade.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteLoss, TooShort, ZeroVariance
from .noise import (
    NoiseParams,
    cbf_from_kf2,
    cbv_from_intensity,
    minimum_trace_length,
    unchecked_noise_params,
)
from .sigproc import FilterConfig, highpass, highpass_batch, _is_degenerate
from .trace import Trace

DEFAULT_KF2_FLOOR = 1e-6

# Internal sentinel loss for iterates whose flow waveform degenerates (fully
# floored): strictly worse than any attainable VFSI^2, never returned.
_DEGENERATE_LOSS = 2.0

GRADIENT_MODES = ("analytic", "central-finite-difference")


@dataclass(frozen=True)
class CalibConfig:
    """Optimizer configuration.

    learning_rate applies to the scaled parameters. gradient_mode selects the
    exact chain-rule gradient or a central finite difference (the latter is
    also the automatic fallback when a sample sits exactly on the reciprocal
    floor, where the analytic derivative is undefined). convergence_tol of 0
    runs all iterations; a positive value stops once the loss change between
    consecutive iterations falls below it.
    """

    max_iterations: int = 500
    learning_rate: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    nonneg_projection: bool = True
    gradient_mode: str = "analytic"
    fd_rel_step: float = 1e-4
    convergence_tol: float = 0.0
    kf2_floor: float = DEFAULT_KF2_FLOOR

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        for name in ("adam_beta1", "adam_beta2"):
            b = getattr(self, name)
            if not 0 <= b < 1:
                raise ValueError(f"{name} must be in [0, 1)")
        if self.adam_epsilon <= 0 or self.fd_rel_step <= 0 or self.kf2_floor <= 0:
            raise ValueError("adam_epsilon, fd_rel_step and kf2_floor must be > 0")
        if self.convergence_tol < 0:
            raise ValueError("convergence_tol must be >= 0")
        if self.gradient_mode not in GRADIENT_MODES:
            raise ValueError(f"gradient_mode must be one of {GRADIENT_MODES}")


@dataclass(frozen=True, eq=False)
class CalibrationResult:
    """Outcome of one calibration run.

    loss_history holds the VFSI^2 evaluated at each iteration; the final
    entry is re-evaluated at the returned (best) parameters, so
    vfsi_final**2 equals loss_history[-1]. improved is False when no iterate
    beat the loss at the priors, in which case params_opt equals params_init.
    """

    params_opt: NoiseParams
    params_init: NoiseParams
    loss_history: np.ndarray
    vfsi_final: float
    cbf_opt: np.ndarray
    iterations_run: int
    floored_fraction: float
    improved: bool
    diagnostics: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "params_opt": {
                "gain_adu_per_e": self.params_opt.gain_adu_per_e,
                "cam_var_adu2": self.params_opt.cam_var_adu2,
            },
            "params_init": {
                "gain_adu_per_e": self.params_init.gain_adu_per_e,
                "cam_var_adu2": self.params_init.cam_var_adu2,
            },
            "loss_history": [float(v) for v in self.loss_history],
            "vfsi_final": self.vfsi_final,
            "iterations_run": self.iterations_run,
            "floored_fraction": self.floored_fraction,
            "improved": self.improved,
            "fd_fallback_evals": int(self.diagnostics.get("fd_fallback_evals", 0)),
        }


class _LossContext:
    """Precomputed quantities shared by every loss/gradient evaluation."""

    def __init__(self, trace: Trace, filter_cfg: FilterConfig, kf2_floor: float):
        if kf2_floor <= 0:
            raise ValueError("kf2_floor must be > 0")
        n_min = minimum_trace_length(trace.meta.sampling_rate_hz, filter_cfg)
        if len(trace) < n_min:
            raise TooShort(
                f"trace of {len(trace)} samples is below the filtering minimum {n_min}"
            )
        self.fs = trace.meta.sampling_rate_hz
        self.filter_cfg = filter_cfg
        self.floor = float(kf2_floor)
        self.k = trace.k_raw_sq
        self.inv_i = 1.0 / trace.mean_intensity
        self.inv_i2 = self.inv_i * self.inv_i

        cbv = cbv_from_intensity(trace)
        cbv_hp = highpass(cbv, self.fs, filter_cfg)
        if _is_degenerate(cbv_hp, trace.mean_intensity):
            raise ZeroVariance("volume waveform is constant (flat intensity trace)")
        self.y = cbv_hp - cbv_hp.mean()
        self.syy = float(self.y @ self.y)

        mean_k = float(self.k.mean())
        mean_i = float(trace.mean_intensity.mean())
        self.scale_g = mean_k * mean_i
        self.scale_s = mean_k * mean_i * mean_i

    def _cbf(self, gain: float, cam_var: float) -> tuple[np.ndarray, np.ndarray]:
        kf2 = self.k - gain * self.inv_i - cam_var * self.inv_i2
        return kf2, 1.0 / np.maximum(kf2, self.floor)

    def rho(self, gain: float, cam_var: float) -> float | None:
        """Signed VFSI at the given raw parameters; None when the flow
        waveform degenerates (every sample floored)."""
        _, cbf = self._cbf(gain, cam_var)
        x = highpass(cbf, self.fs, self.filter_cfg)
        if _is_degenerate(x, cbf):
            return None
        xc = x - x.mean()
        sxx = float(xc @ xc)
        r = float(xc @ self.y) / math.sqrt(sxx * self.syy)
        return min(1.0, max(-1.0, r))

    def loss(self, gain: float, cam_var: float) -> float:
        r = self.rho(gain, cam_var)
        return _DEGENERATE_LOSS if r is None else r * r

    def rho_and_grad(
        self, gain: float, cam_var: float
    ) -> tuple[float | None, tuple[float, float] | None]:
        """One-pass signed VFSI plus its exact gradient.

        rho is None when the flow waveform degenerates; the gradient is None
        when a sample sits exactly on the floor boundary (kink in the
        reciprocal; caller falls back to finite differences there).
        """
        kf2, cbf = self._cbf(gain, cam_var)
        x = highpass(cbf, self.fs, self.filter_cfg)
        if _is_degenerate(x, cbf):
            return None, None
        xc = x - x.mean()
        sxx = float(xc @ xc)
        sxy = float(xc @ self.y)
        denom = math.sqrt(sxx * self.syy)
        rho = min(1.0, max(-1.0, sxy / denom))
        if np.any(kf2 == self.floor):
            return rho, None
        # d rho / d x_i; the weights sum to zero so the filtered derivative
        # vectors need no re-centering. Chains d(rho^2) -> Pearson weights ->
        # filter linearity -> reciprocal -> the subtracted noise terms.
        w = self.y / denom - (rho / sxx) * xc
        mask = kf2 > self.floor
        recip_sq = np.where(mask, 1.0 / np.maximum(kf2, self.floor) ** 2, 0.0)
        d_cbf = np.vstack((recip_sq * self.inv_i, recip_sq * self.inv_i2))
        d_x = highpass_batch(d_cbf, self.fs, self.filter_cfg)
        two_rho = 2.0 * rho
        return rho, (two_rho * float(w @ d_x[0]), two_rho * float(w @ d_x[1]))

    def analytic_gradient(self, gain: float, cam_var: float) -> tuple[float, float] | None:
        """Exact gradient of VFSI^2 w.r.t. the raw parameters; None at a
        floor-boundary kink or a degenerate waveform."""
        _, grad = self.rho_and_grad(gain, cam_var)
        return grad

    def fd_gradient(
        self, gain: float, cam_var: float, rel_step: float
    ) -> tuple[float, float]:
        """Central finite difference in scaled coordinates."""
        u = gain / self.scale_g
        v = cam_var / self.scale_s
        hu = rel_step * max(abs(u), 1.0)
        hv = rel_step * max(abs(v), 1.0)
        d_du = (
            self.loss((u + hu) * self.scale_g, cam_var)
            - self.loss((u - hu) * self.scale_g, cam_var)
        ) / (2.0 * hu)
        d_dv = (
            self.loss(gain, (v + hv) * self.scale_s)
            - self.loss(gain, (v - hv) * self.scale_s)
        ) / (2.0 * hv)
        return d_du / self.scale_g, d_dv / self.scale_s


def loss(
    trace: Trace,
    params: NoiseParams,
    filter_cfg: FilterConfig = FilterConfig(),
    kf2_floor: float = DEFAULT_KF2_FLOOR,
) -> float:
    """VFSI^2 of the trace at the given noise parameters, in [0, 1].

    Raises ZeroVariance when either high-passed waveform is constant (flat
    intensity, or flow fully clamped at the reciprocal floor).
    """
    ctx = _LossContext(trace, filter_cfg, kf2_floor)
    r = ctx.rho(params.gain_adu_per_e, params.cam_var_adu2)
    if r is None:
        raise ZeroVariance("flow waveform is constant (all samples floored)")
    return r * r


def loss_gradient(
    trace: Trace,
    params: NoiseParams,
    filter_cfg: FilterConfig = FilterConfig(),
    kf2_floor: float = DEFAULT_KF2_FLOOR,
    mode: str = "analytic",
    fd_rel_step: float = 1e-4,
    diagnostics: dict | None = None,
) -> tuple[float, float]:
    """Gradient of the loss w.r.t. the raw gain and camera variance.

    In analytic mode a floor-boundary sample triggers a finite-difference
    fallback for that evaluation, recorded in the diagnostics dict.
    """
    if mode not in GRADIENT_MODES:
        raise ValueError(f"mode must be one of {GRADIENT_MODES}")
    ctx = _LossContext(trace, filter_cfg, kf2_floor)
    g, s = params.gain_adu_per_e, params.cam_var_adu2
    if mode == "analytic":
        out = ctx.analytic_gradient(g, s)
        if out is not None:
            return out
        if diagnostics is not None:
            diagnostics["fd_fallback_evals"] = diagnostics.get("fd_fallback_evals", 0) + 1
    return ctx.fd_gradient(g, s, fd_rel_step)


def calibrate(
    trace: Trace,
    priors: NoiseParams,
    cfg: CalibConfig = CalibConfig(),
    filter_cfg: FilterConfig = FilterConfig(),
) -> CalibrationResult:
    """Refine (gain, camera variance) from the priors by Adam descent on VFSI^2.

    Deterministic: identical inputs and configuration give bit-identical
    results. The final iteration re-evaluates the best parameters seen, so
    the last loss_history entry matches the returned waveform, and a run
    that never improves on the priors hands them back unchanged
    (improved=False).
    """
    ctx = _LossContext(trace, filter_cfg, cfg.kf2_floor)
    u = priors.gain_adu_per_e / ctx.scale_g
    v = priors.cam_var_adu2 / ctx.scale_s

    history: list[float] = []
    param_track: list[tuple[float, float]] = []
    best_loss = math.inf
    best_uv = (u, v)
    fd_fallbacks = 0

    m = np.zeros(2)
    sq = np.zeros(2)
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    step = 0

    for _ in range(cfg.max_iterations - 1):
        gain = u * ctx.scale_g
        cam_var = v * ctx.scale_s
        param_track.append((gain, cam_var))
        if cfg.gradient_mode == "analytic":
            rho, grad = ctx.rho_and_grad(gain, cam_var)
        else:
            rho = ctx.rho(gain, cam_var)
            grad = None if rho is None else ctx.fd_gradient(gain, cam_var, cfg.fd_rel_step)
        if rho is None:
            if not history:
                raise ZeroVariance(
                    "flow waveform at the priors is constant (all samples floored)"
                )
            cur = _DEGENERATE_LOSS
            grad = (0.0, 0.0)
        else:
            cur = rho * rho
            if not math.isfinite(cur):
                raise NonFiniteLoss(
                    "non-finite loss during calibration",
                    {"gain": gain, "cam_var": cam_var, "iteration": len(history) + 1},
                )
            if grad is None:
                fd_fallbacks += 1
                grad = ctx.fd_gradient(gain, cam_var, cfg.fd_rel_step)
        history.append(cur)
        if cur < best_loss:
            best_loss = cur
            best_uv = (u, v)
        if (
            cfg.convergence_tol > 0
            and len(history) >= 2
            and abs(history[-2] - history[-1]) < cfg.convergence_tol
        ):
            break

        g_scaled = np.array([grad[0] * ctx.scale_g, grad[1] * ctx.scale_s])
        if not np.all(np.isfinite(g_scaled)):
            raise NonFiniteLoss(
                "non-finite gradient during calibration",
                {"gain": gain, "cam_var": cam_var, "iteration": len(history)},
            )
        step += 1
        m = b1 * m + (1.0 - b1) * g_scaled
        sq = b2 * sq + (1.0 - b2) * g_scaled * g_scaled
        m_hat = m / (1.0 - b1**step)
        sq_hat = sq / (1.0 - b2**step)
        u = u - cfg.learning_rate * m_hat[0] / (math.sqrt(sq_hat[0]) + cfg.adam_epsilon)
        v = v - cfg.learning_rate * m_hat[1] / (math.sqrt(sq_hat[1]) + cfg.adam_epsilon)
        if cfg.nonneg_projection:
            u = max(u, 0.0)
            v = max(v, 0.0)

    # Final pass: restore and re-evaluate the best iterate so the returned
    # parameters, vfsi_final and the last history entry all agree.
    u, v = best_uv
    gain = u * ctx.scale_g
    cam_var = v * ctx.scale_s
    param_track.append((gain, cam_var))
    rho_final = ctx.rho(gain, cam_var)
    if rho_final is None:
        raise ZeroVariance(
            "flow waveform at the priors is constant (all samples floored)"
        )
    final_loss = rho_final * rho_final
    history.append(final_loss)

    prior_loss = history[0]
    improved = final_loss < prior_loss
    if not improved:
        gain, cam_var = priors.gain_adu_per_e, priors.cam_var_adu2

    kf2 = ctx.k - gain * ctx.inv_i - cam_var * ctx.inv_i2
    cbf_opt, floored = cbf_from_kf2(kf2, cfg.kf2_floor)

    if cfg.nonneg_projection:
        params_opt = NoiseParams(max(float(gain), 0.0), max(float(cam_var), 0.0))
    else:
        params_opt = unchecked_noise_params(float(gain), float(cam_var))

    return CalibrationResult(
        params_opt=params_opt,
        params_init=priors,
        loss_history=np.asarray(history),
        vfsi_final=float(rho_final),
        cbf_opt=cbf_opt,
        iterations_run=len(history),
        floored_fraction=floored / len(trace),
        improved=improved,
        diagnostics={
            "fd_fallback_evals": fd_fallbacks,
            "param_history": np.asarray(param_track),
            "scale_g": ctx.scale_g,
            "scale_s": ctx.scale_s,
        },
    )


@dataclass(frozen=True, eq=False)
class GridOracleResult:
    """Exhaustive loss surface over a parameter grid (independent verifier)."""

    gain_best: float
    cam_var_best: float
    loss_best: float
    loss_surface: np.ndarray  # shape (n_gain, n_cam_var)
    gain_values: np.ndarray
    cam_var_values: np.ndarray


def grid_oracle(
    trace: Trace,
    g_range: tuple[float, float],
    s_range: tuple[float, float],
    n: int,
    filter_cfg: FilterConfig = FilterConfig(),
    kf2_floor: float = DEFAULT_KF2_FLOOR,
) -> GridOracleResult:
    """Brute-force VFSI^2 over an n x n grid of (gain, camera variance).

    Grid points whose flow waveform degenerates carry NaN in the surface and
    are excluded from the argmin. Evaluation is vectorized one gain row at a
    time to bound memory.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    for lo, hi in (g_range, s_range):
        if not (math.isfinite(lo) and math.isfinite(hi) and lo <= hi):
            raise ValueError("ranges must be finite with lo <= hi")
    ctx = _LossContext(trace, filter_cfg, kf2_floor)
    gains = np.linspace(g_range[0], g_range[1], n)
    cam_vars = np.linspace(s_range[0], s_range[1], n)

    surface = np.empty((n, n))
    for i, g in enumerate(gains):
        # same association order as the scalar loss so surface entries match
        # direct evaluations bitwise
        kf2 = (ctx.k - g * ctx.inv_i)[np.newaxis, :] - (
            cam_vars[:, np.newaxis] * ctx.inv_i2[np.newaxis, :]
        )
        cbf = 1.0 / np.maximum(kf2, ctx.floor)
        x = highpass_batch(cbf, ctx.fs, ctx.filter_cfg)
        xc = x - x.mean(axis=1, keepdims=True)
        sxx = np.einsum("ij,ij->i", xc, xc)
        sxy = xc @ ctx.y
        scale = np.maximum(np.abs(cbf.mean(axis=1)), cbf.std(axis=1))
        degenerate = x.std(axis=1) <= 1e-12 * np.maximum(scale, 1e-300)
        with np.errstate(invalid="ignore", divide="ignore"):
            rho = sxy / np.sqrt(sxx * ctx.syy)
        rho = np.clip(rho, -1.0, 1.0)
        row = rho * rho
        row[degenerate] = np.nan
        surface[i] = row

    if np.all(np.isnan(surface)):
        raise ZeroVariance("every grid point produced a degenerate flow waveform")
    flat = np.nanargmin(surface)
    bi, bj = np.unravel_index(flat, surface.shape)
    return GridOracleResult(
        gain_best=float(gains[bi]),
        cam_var_best=float(cam_vars[bj]),
        loss_best=float(surface[bi, bj]),
        loss_surface=surface,
        gain_values=gains,
        cam_var_values=cam_vars,
    )
