"""Acceptance suite: one test per release criterion, each printing a PASS line
with its runtime. Criteria 5 and 6 share the session-scoped 30-dataset sweep."""

import math
import time

import numpy as np
import pytest
import scipy.stats

from scos import (
    CalibConfig,
    FilterConfig,
    NoiseParams,
    StatsConfig,
    Trace,
    TraceMeta,
    calibrate,
    cbf_from_kf2,
    cbv_from_intensity,
    fidelity,
    frame_k_raw_sq,
    generate,
    generate_frames,
    grid_oracle,
    highpass,
    load_trace,
    loss,
    loss_gradient,
    low_signal_scenario,
    pearson,
    save_trace,
    subtract_noise,
)
from scos.calib import _LossContext
from scos.synth import SynthSpec


class Budget:
    def __init__(self, criterion: int, label: str, seconds: float):
        self.criterion = criterion
        self.label = label
        self.seconds = seconds

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.t0
        if exc_type is None:
            print(f"\nACCEPTANCE {self.criterion} PASS: {self.label} "
                  f"({elapsed:.2f}s / budget {self.seconds:.0f}s)")
            assert elapsed <= self.seconds, (
                f"criterion {self.criterion} exceeded its runtime budget: "
                f"{elapsed:.2f}s > {self.seconds}s"
            )
        else:
            print(f"\nACCEPTANCE {self.criterion} FAIL: {self.label} "
                  f"({elapsed:.2f}s)")
        return False


def test_criterion_1_equation_fidelity():
    with Budget(1, "equation fidelity vs hand-computed values", 1.0):
        n = 8
        meta = TraceMeta(sampling_rate_hz=60.0, duration_s=n / 60.0)
        trace = Trace(
            meta=meta,
            t=np.arange(n) / 60.0,
            k_raw_sq=np.full(n, 0.10),
            mean_intensity=np.full(n, 100.0),
        )
        out = subtract_noise(trace, NoiseParams(2.0, 100.0))
        assert out[0] == pytest.approx(0.07, rel=1e-12)
        out = subtract_noise(trace, NoiseParams(0.0, 0.0))
        assert np.array_equal(out, trace.k_raw_sq)
        low = Trace(
            meta=meta,
            t=trace.t,
            k_raw_sq=np.full(n, 0.02),
            mean_intensity=np.full(n, 100.0),
        )
        assert subtract_noise(low, NoiseParams(2.0, 100.0))[0] == pytest.approx(
            -0.01, rel=1e-12
        )

        cbf, floored = cbf_from_kf2(np.array([0.05, 0.04]), floor=1e-6)
        assert cbf[0] == pytest.approx(20.0, rel=1e-12)
        assert cbf[1] == pytest.approx(25.0, rel=1e-12)
        assert floored == 0
        cbf, floored = cbf_from_kf2(np.array([-0.01]), floor=1e-6)
        assert cbf[0] == pytest.approx(1e6, rel=1e-12)
        assert floored == 1

        drop = Trace(
            meta=meta,
            t=trace.t,
            k_raw_sq=np.full(n, 0.1),
            mean_intensity=np.array([100.0] * 4 + [100.0 / math.e] + [100.0] * 3),
        )
        dod = cbv_from_intensity(drop, i0=100.0)
        assert dod[4] == pytest.approx(1.0, rel=1e-12)
        assert dod[0] == pytest.approx(0.0, abs=1e-15)


def test_criterion_2_gradient_correctness():
    with Budget(2, "analytic gradient vs central differences, 20 traces", 30.0):
        worst = 0.0
        for seed in range(20):
            level = 35.0 + 7.0 * seed
            ds = generate(low_signal_scenario(level, rng_seed=seed))
            ga = loss_gradient(ds.trace, ds.prior_params, mode="analytic")
            gf = loss_gradient(
                ds.trace, ds.prior_params,
                mode="central-finite-difference", fd_rel_step=1e-5,
            )
            for a, f in zip(ga, gf):
                worst = max(worst, abs(a - f) / max(abs(a), abs(f)))
        print(f"  worst relative disagreement: {worst:.2e}")
        assert worst < 1e-5


def test_criterion_3_oracle_equivalence():
    with Budget(3, "calibrate matches 101x101 grid oracle, 5 datasets", 300.0):
        for seed in range(5):
            ds = generate(low_signal_scenario(40.0 + 8 * seed, rng_seed=seed))
            truth = ds.truth_params
            res = calibrate(ds.trace, ds.prior_params)
            grid = grid_oracle(
                ds.trace,
                (0.5 * truth.gain_adu_per_e, 1.5 * truth.gain_adu_per_e),
                (0.0, 3.0 * truth.cam_var_adu2),
                n=101,
            )
            assert res.loss_history[-1] <= grid.loss_best + 1e-4, seed


def test_criterion_4_artifact_suppression(scenario_50, scenario_27):
    with Budget(4, "low-signal artifact suppression at ~50 and ~27 e-/px", 60.0):
        for ds in (scenario_50, scenario_27):
            fs = ds.trace.meta.sampling_rate_hz
            ctx = _LossContext(ds.trace, FilterConfig(), 1e-6)
            p = ds.prior_params
            vfsi_pre = ctx.rho(p.gain_adu_per_e, p.cam_var_adu2)
            assert abs(vfsi_pre) > 0.5

            res = calibrate(ds.trace, p)
            fid_post = fidelity(res.cbf_opt, ds.truth_flow, fs)
            level = ds.trace.meta.signal_level_e_per_px
            print(f"  {level:5.1f} e-/px: VFSI {vfsi_pre:+.3f} -> "
                  f"{res.vfsi_final:+.2e}, fidelity {fid_post:.3f}")
            assert abs(res.vfsi_final) <= 0.15
            assert fid_post >= 0.95


def test_criterion_5_threshold_reduction(request):
    with Budget(5, "post-optimization hinge threshold below pre", 600.0):
        sweep_study = request.getfixturevalue("sweep_study")
        pre, post = sweep_study.pre_fit, sweep_study.post_fit
        assert pre is not None and post is not None
        assert sweep_study.failures == []
        print(f"  pre threshold {pre.threshold_e_per_px:.1f} e-/px "
              f"(reliable={pre.reliable}), post {post.threshold_e_per_px:.1f} "
              f"(reliable={post.reliable})")
        assert post.threshold_e_per_px < pre.threshold_e_per_px
        assert pre.reliable and post.reliable
        # the pre curve must rise sharply below its hinge
        assert pre.left_slope < 0
        assert abs(pre.left_slope) >= 2.0 * pre.left_slope_se


def test_criterion_6_fidelity_curve_shape(sweep_study):
    with Budget(6, "fidelity-curve shape across the sweep", 600.0):
        lv_pre = np.array([p.signal_level_e_per_px for p in sweep_study.pre_points])
        fid_pre = np.array([p.fidelity for p in sweep_study.pre_points])
        rho = scipy.stats.spearmanr(lv_pre, fid_pre).statistic
        print(f"  pre-fidelity Spearman vs level: {rho:.3f}")
        assert rho > 0.8

        threshold = sweep_study.pre_fit.threshold_e_per_px
        below = fid_pre[lv_pre < threshold]
        assert below.size and below.min() < 0.9

        lv_post = np.array([p.signal_level_e_per_px for p in sweep_study.post_points])
        fid_post = np.array([p.fidelity for p in sweep_study.post_points])
        usable = lv_post >= 26.0
        print(f"  min post fidelity at >=26 e-/px: {fid_post[usable].min():.3f}")
        assert np.all(fid_post[usable] >= 0.95)


def test_criterion_7_zero_prior_robustness():
    with Budget(7, "zero-prior auto-calibration at ~55 e-/px", 10.0):
        ds = generate(low_signal_scenario(55.0, rng_seed=6))
        informed = calibrate(ds.trace, ds.prior_params)
        zero = calibrate(ds.trace, NoiseParams(0.0, 0.0))
        corr = pearson(zero.cbf_opt, informed.cbf_opt)
        print(f"  corr(zero-prior CBF, informed-prior CBF) = {corr:.4f}")
        assert corr >= 0.98


def test_criterion_8_throughput(scenario_50):
    with Budget(8, "500 iterations on a 1200-sample trace", 5.0):
        res = calibrate(
            scenario_50.trace, scenario_50.prior_params,
            CalibConfig(max_iterations=500),
        )
        assert res.iterations_run == 500
        assert len(scenario_50.trace) == 1200


def test_criterion_9_property_suites():
    with Budget(9, "randomized property suites (>= 1000 cases)", 120.0):
        cases = 0
        rng = np.random.default_rng(2024)

        # Pearson affine invariance
        for _ in range(250):
            x = rng.standard_normal(48)
            y = rng.standard_normal(48)
            a = float(rng.uniform(0.05, 20.0))
            b = float(rng.uniform(-20.0, 20.0))
            base = pearson(x, y)
            assert pearson(a * x + b, y) == pytest.approx(base, abs=1e-12)
            assert pearson(-a * x + b, y) == pytest.approx(-base, abs=1e-12)
            cases += 1

        # high-pass DC rejection and linearity
        for _ in range(120):
            dc = float(rng.uniform(-50.0, 50.0))
            x = rng.standard_normal(256)
            y = rng.standard_normal(256)
            a, b = float(rng.uniform(-3, 3)), float(rng.uniform(-3, 3))
            flat = highpass(np.full(256, dc), 60.0)
            assert np.max(np.abs(flat)) <= 1e-9 * max(abs(dc), 1.0)
            lhs = highpass(a * x + b * y, 60.0)
            rhs = a * highpass(x, 60.0) + b * highpass(y, 60.0)
            scale = max(float(np.max(np.abs(lhs))), 1e-12)
            assert np.max(np.abs(lhs - rhs)) <= 1e-9 * scale
            cases += 1

        # contrast scale invariance
        cfg = StatsConfig(window_px=3)
        for _ in range(150):
            frame = rng.uniform(10.0, 200.0, size=(12, 12))
            c = float(rng.uniform(0.1, 100.0))
            k_ref, mi_ref = frame_k_raw_sq(frame, cfg)
            k_scaled, mi_scaled = frame_k_raw_sq(c * frame, cfg)
            assert k_scaled == pytest.approx(k_ref, rel=1e-12)
            assert mi_scaled == pytest.approx(c * mi_ref, rel=1e-12)
            cases += 1

        # trace round-trip I/O
        import tempfile
        from pathlib import Path

        with tempfile.TemporaryDirectory() as tmp:
            for i in range(150):
                n = int(rng.integers(2, 24))
                fs = float(rng.uniform(1.0, 500.0))
                trace = Trace(
                    meta=TraceMeta(sampling_rate_hz=fs, duration_s=n / fs),
                    t=np.arange(n) / fs,
                    k_raw_sq=rng.uniform(0.0, 1.0, n),
                    mean_intensity=rng.uniform(1e-3, 1e6, n),
                )
                p = Path(tmp) / f"t{i}.csv"
                save_trace(trace, p)
                assert load_trace(p) == trace
                cases += 1

        # generator seed determinism
        for seed in range(10):
            spec = low_signal_scenario(30.0 + 10 * seed, rng_seed=seed)
            a, b = generate(spec), generate(spec)
            assert np.array_equal(a.trace.k_raw_sq, b.trace.k_raw_sq)
            assert np.array_equal(a.trace.mean_intensity, b.trace.mean_intensity)
            cases += 1

        # best-so-far monotonicity + nonneg projection across random runs
        for i in range(20):
            ds = generate(low_signal_scenario(
                float(rng.uniform(30, 200)),
                dgain_frac=float(rng.uniform(-0.4, -0.05)),
                rng_seed=int(rng.integers(0, 10_000)),
            ))
            res = calibrate(
                ds.trace, ds.prior_params, CalibConfig(max_iterations=40)
            )
            running_min = np.minimum.accumulate(res.loss_history)
            assert np.all(np.diff(running_min) <= 0)
            assert res.loss_history[-1] == res.loss_history.min()
            assert np.all(res.diagnostics["param_history"] >= 0.0)
            cases += 1

        # reciprocal floor reporting
        for _ in range(300):
            kf2 = rng.uniform(-1.0, 1.0, 32)
            floor = float(rng.uniform(1e-9, 1e-3))
            cbf, floored = cbf_from_kf2(kf2, floor)
            assert np.all(np.isfinite(cbf))
            assert floored == int(np.sum(kf2 < floor))
            assert np.all(cbf <= 1.0 / floor + 1e-9)
            cases += 1

        print(f"  randomized cases exercised: {cases}")
        assert cases >= 1000


def test_criterion_10_frame_stats_consistency():
    with Budget(10, "frame statistics recover generating contrast", 60.0):
        spec = SynthSpec(
            duration_s=1.0,
            sampling_rate_hz=60.0,
            kf2_baseline=0.08,
            flow_pulsatility=0.10,
            intensity_pulsatility=0.02,
            rng_seed=31,
        )
        stack = generate_frames(spec)
        assert stack.n_frames == 60
        assert (stack.width, stack.height) == (1920, 1200)
        ds = generate(SynthSpec(**{**spec.to_json_dict(), "noiseless": True}))
        cfg = StatsConfig(window_px=7)
        n_tiles = (1200 // 7) * (1920 // 7)
        inten = spec.intensity_baseline_adu * np.exp(-ds.truth_dod)
        expected = (
            ds.truth_kf2
            + spec.true_gain_adu_per_e / inten
            + spec.true_cam_var_adu2 / inten**2
        )
        worst_z = 0.0
        for i in range(stack.n_frames):
            k2, _ = frame_k_raw_sq(stack.frames[i], cfg)
            se = math.sqrt(2.0 / n_tiles) * expected[i]
            worst_z = max(worst_z, abs(k2 - expected[i]) / se)
        print(f"  worst |z| across 60 frames: {worst_z:.2f}")
        assert worst_z < 3.0
