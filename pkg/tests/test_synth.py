import numpy as np
import pytest
import scipy.stats

from scos import (
    NoiseParams,
    StatsConfig,
    fidelity,
    frame_k_raw_sq,
    generate,
    generate_frames,
    loss,
    low_signal_scenario,
    signal_sweep,
    stack_to_trace,
    subtract_noise,
)
from scos.errors import SpecInvalid, ZeroVariance
from scos.synth import SynthSpec, contrast_noise_sigma, load_spec


class TestSpecValidation:
    def test_defaults_valid(self):
        spec = SynthSpec()
        assert spec.n_samples == 1200
        assert spec.signal_level_e_per_px == pytest.approx(200.0)

    def test_rejects_bad_values(self):
        with pytest.raises(SpecInvalid):
            SynthSpec(sampling_rate_hz=0.0)
        with pytest.raises(SpecInvalid):
            SynthSpec(heart_rate_hz=5.0)
        with pytest.raises(SpecInvalid):
            SynthSpec(injected_dgain_frac=1.5)
        with pytest.raises(SpecInvalid):
            SynthSpec(true_gain_adu_per_e=-2.0)
        with pytest.raises(SpecInvalid):
            SynthSpec(n_pixels=100)  # inconsistent with frame dimensions

    def test_json_round_trip(self, tmp_path):
        spec = low_signal_scenario(42.0, rng_seed=9)
        p = tmp_path / "spec.json"
        import json

        p.write_text(json.dumps(spec.to_json_dict()), encoding="utf-8")
        assert load_spec(p) == spec

    def test_load_spec_errors(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json", encoding="utf-8")
        with pytest.raises(SpecInvalid):
            load_spec(p)
        p2 = tmp_path / "unknown.json"
        p2.write_text('{"no_such_field": 1}', encoding="utf-8")
        with pytest.raises(SpecInvalid):
            load_spec(p2)


class TestGenerate:
    def test_seed_determinism(self):
        spec = low_signal_scenario(50.0, rng_seed=123)
        a = generate(spec)
        b = generate(spec)
        assert np.array_equal(a.trace.k_raw_sq, b.trace.k_raw_sq)
        assert np.array_equal(a.trace.mean_intensity, b.trace.mean_intensity)
        assert np.array_equal(a.truth_flow, b.truth_flow)

    def test_zero_pulsatility_noiseless_is_constant_and_degenerate(self):
        spec = SynthSpec(
            flow_pulsatility=0.0, intensity_pulsatility=0.0, noiseless=True
        )
        ds = generate(spec)
        assert np.ptp(ds.trace.k_raw_sq) == 0.0
        assert np.ptp(ds.trace.mean_intensity) == 0.0
        with pytest.raises(ZeroVariance):
            loss(ds.trace, ds.truth_params)

    def test_prior_construction_exact(self):
        spec = low_signal_scenario(50.0, dgain_frac=-0.2, dvar_frac=0.1)
        ds = generate(spec)
        assert ds.prior_params.gain_adu_per_e == spec.true_gain_adu_per_e * 0.8
        assert ds.prior_params.cam_var_adu2 == spec.true_cam_var_adu2 * 1.1

    def test_signal_level_accounting(self):
        for level in (30.0, 200.0):
            ds = generate(low_signal_scenario(level, rng_seed=2))
            measured = ds.trace.mean_intensity.mean() / ds.spec.true_gain_adu_per_e
            assert measured == pytest.approx(level, rel=0.02)
            assert ds.trace.meta.signal_level_e_per_px == pytest.approx(measured)

    def test_inverse_consistency_z_scores(self):
        ds = generate(low_signal_scenario(50.0, rng_seed=7))
        recovered = subtract_noise(ds.trace, ds.truth_params)
        sigma = contrast_noise_sigma(ds.spec, ds.truth_kf2 + (
            ds.spec.true_gain_adu_per_e / (ds.spec.intensity_baseline_adu * np.exp(-ds.truth_dod))
            + ds.spec.true_cam_var_adu2 / (ds.spec.intensity_baseline_adu * np.exp(-ds.truth_dod)) ** 2
        ))
        z = (recovered - ds.truth_kf2) / sigma
        assert np.max(np.abs(z)) < 4.0

    def test_negative_injection_gives_negative_vfsi_at_low_signal(self):
        ds = generate(low_signal_scenario(50.0, dgain_frac=-0.2, rng_seed=3))
        value = loss(ds.trace, ds.prior_params)
        from scos.calib import _LossContext
        from scos import FilterConfig

        ctx = _LossContext(ds.trace, FilterConfig(), 1e-6)
        rho = ctx.rho(ds.prior_params.gain_adu_per_e, ds.prior_params.cam_var_adu2)
        assert rho < -0.5
        assert value > 0.25

    def test_positive_injection_magnitude(self):
        ds = generate(low_signal_scenario(50.0, dgain_frac=0.2, rng_seed=3))
        assert loss(ds.trace, ds.prior_params) > 0.25

    def test_zero_error_high_signal_fidelity(self):
        ds = generate(SynthSpec(intensity_baseline_adu=1000.0, rng_seed=5))
        from scos import cbf_from_kf2

        cbf, _ = cbf_from_kf2(subtract_noise(ds.trace, ds.prior_params))
        assert fidelity(cbf, ds.truth_flow, 60.0) > 0.999

    def test_flow_template_has_peak_and_notch(self):
        spec = SynthSpec(rng_seed=0, noiseless=True)
        ds = generate(spec)
        fs, hr = spec.sampling_rate_hz, spec.heart_rate_hz
        period = int(round(fs / hr))
        cycle = ds.truth_flow[2 * period : 3 * period]
        interior = cycle[1:-1]
        maxima = np.flatnonzero(
            (interior > cycle[:-2]) & (interior > cycle[2:])
        )
        assert len(maxima) == 2  # systolic peak plus dicrotic bump

    def test_flow_and_volume_truths_are_decorrelated(self):
        ds = generate(SynthSpec(rng_seed=4, noiseless=True))
        f = ds.truth_flow - ds.truth_flow.mean()
        v = ds.truth_dod - ds.truth_dod.mean()
        corr = float(f @ v) / np.sqrt(float(f @ f) * float(v @ v))
        assert abs(corr) < 1e-10


class TestGenerateFrames:
    def test_noise_free_constant_frame(self):
        spec = SynthSpec(
            duration_s=1 / 60.0,
            flow_pulsatility=0.0,
            intensity_pulsatility=0.0,
            kf2_baseline=1e-12,
            true_gain_adu_per_e=1e-9,
            true_cam_var_adu2=0.0,
            frame_width=200,
            frame_height=100,
            n_pixels=20_000,
            intensity_baseline_adu=400.0,
        )
        stack = generate_frames(spec)
        assert stack.n_frames == 1
        assert np.ptp(stack.frames) <= 1  # rounding only
        assert abs(float(stack.frames.mean()) - 400.0) < 0.5

    def test_recovers_generating_contrast_within_3_se(self):
        spec = SynthSpec(
            duration_s=3 / 60.0,
            kf2_baseline=0.1,
            flow_pulsatility=0.0,
            intensity_pulsatility=0.0,
            rng_seed=21,
        )
        stack = generate_frames(spec)
        cfg = StatsConfig(window_px=7)
        n_tiles = (1200 // 7) * (1920 // 7)
        for i in range(stack.n_frames):
            k2, _ = frame_k_raw_sq(stack.frames[i], cfg)
            expected = 0.1 + spec.true_gain_adu_per_e / 400.0 + spec.true_cam_var_adu2 / 400.0**2
            se = np.sqrt(2.0 / n_tiles) * expected
            assert abs(k2 - expected) < 3 * se

    def test_stack_to_trace_follows_intensity_waveform(self):
        spec = SynthSpec(
            duration_s=0.5,
            sampling_rate_hz=60.0,
            intensity_pulsatility=0.04,
            flow_pulsatility=0.0,
            frame_width=400,
            frame_height=300,
            n_pixels=120_000,
            rng_seed=11,
        )
        stack = generate_frames(spec)
        trace = stack_to_trace(stack, StatsConfig(window_px=5), 60.0)
        ds = generate(spec)
        expected = ds.spec.intensity_baseline_adu * np.exp(-ds.truth_dod)
        assert np.allclose(trace.mean_intensity, expected, rtol=0.01)

    def test_requires_enough_pixels(self):
        spec = SynthSpec(frame_width=50, frame_height=50, n_pixels=2500)
        with pytest.raises(SpecInvalid):
            generate_frames(spec)


class TestSignalSweep:
    def test_single_level(self):
        base = low_signal_scenario(50.0, rng_seed=13)
        (ds,) = signal_sweep(base, [500.0])
        assert ds.trace.mean_intensity.mean() / 2.0 == pytest.approx(500.0, rel=0.02)

    def test_empty_levels(self):
        assert signal_sweep(low_signal_scenario(50.0), []) == []

    def test_vfsi_sq_monotone_decreasing_in_level(self):
        base = low_signal_scenario(50.0, dgain_frac=-0.2, rng_seed=17)
        levels = [20, 30, 45, 70, 100, 160, 250, 400]
        losses = [loss(ds.trace, ds.prior_params) for ds in signal_sweep(base, levels)]
        rho = scipy.stats.spearmanr(levels, losses).statistic
        assert rho < -0.8

    def test_shared_seed_keeps_waveforms_comparable(self):
        base = low_signal_scenario(50.0, rng_seed=23)
        a, b = signal_sweep(base, [50.0, 400.0])
        assert np.array_equal(a.truth_flow, b.truth_flow)

    def test_rejects_bad_level(self):
        with pytest.raises(SpecInvalid):
            signal_sweep(low_signal_scenario(50.0), [-5.0])
