"""Command-line front end: frames-to-trace, calibrate, synth and sweep.

Every command is reproducible (same inputs, config and seed give identical
CSV/JSON bytes), writes only inside its designated output location, echoes
its effective configuration for provenance, and reports failures as one
machine-parseable line on stderr: ``error:<slug>:<detail>``.

Exit codes: 0 success, 2 I/O, 3 geometry, 4 degenerate signal, 5 invalid
spec, 6 sweep failure.
"""

from __future__ import annotations

import dataclasses
import json
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import click
import numpy as np

from . import __version__
from .analysis import (
    POST_LABEL,
    PRE_LABEL,
    SweepPoint,
    run_sweep_study,
)
from .calib import CalibConfig, calibrate
from .contrast import StatsConfig, stack_to_trace
from .errors import (
    BadMagic,
    CutoffAboveNyquist,
    DegenerateSpread,
    FrameTooSmall,
    InsufficientPoints,
    IoFailure,
    LengthMismatch,
    MissingColumn,
    NonMonotonicTime,
    NonPositiveBaseline,
    NonPositiveIntensity,
    PixelOutOfRange,
    ScosError,
    SpecInvalid,
    TooShort,
    TruncatedFile,
    ZeroMeanTile,
    ZeroVariance,
)
from .noise import NoiseParams, derive_hemo
from .sigproc import FilterConfig, vfsi
from .svgplot import scatter_hinge_figure, waveform_figure
from .synth import (
    SynthDataset,
    SynthSpec,
    generate,
    generate_frames,
    load_spec,
    low_signal_scenario,
    signal_sweep,
)
from .trace import (
    Trace,
    atomic_write_text,
    load_frame_stack,
    load_trace,
    save_frame_stack,
    save_trace,
)

EXIT_IO = 2
EXIT_GEOMETRY = 3
EXIT_DEGENERATE = 4
EXIT_SPEC = 5
EXIT_SWEEP = 6

_ERROR_SLUGS: list[tuple[type, str, int]] = [
    (FrameTooSmall, "frame-too-small", EXIT_GEOMETRY),
    (ZeroMeanTile, "zero-mean-tile", EXIT_GEOMETRY),
    (ZeroVariance, "zero-variance", EXIT_DEGENERATE),
    (TooShort, "too-short", EXIT_DEGENERATE),
    (CutoffAboveNyquist, "cutoff-above-nyquist", EXIT_DEGENERATE),
    (LengthMismatch, "length-mismatch", EXIT_DEGENERATE),
    (NonPositiveBaseline, "nonpositive-baseline", EXIT_DEGENERATE),
    (SpecInvalid, "spec-invalid", EXIT_SPEC),
    (InsufficientPoints, "insufficient-points", EXIT_SWEEP),
    (DegenerateSpread, "degenerate-spread", EXIT_SWEEP),
    (MissingColumn, "missing-column", EXIT_IO),
    (NonMonotonicTime, "non-monotonic-time", EXIT_IO),
    (NonPositiveIntensity, "non-positive-intensity", EXIT_IO),
    (BadMagic, "bad-magic", EXIT_IO),
    (TruncatedFile, "truncated-file", EXIT_IO),
    (PixelOutOfRange, "pixel-out-of-range", EXIT_IO),
    (IoFailure, "io-failure", EXIT_IO),
    (ScosError, "error", EXIT_IO),
]


def _fail(slug: str, detail: str, code: int):
    click.echo(f"error:{slug}:{detail}", err=True)
    sys.exit(code)


def _require_exists(path: str | None) -> None:
    if path is not None and not Path(path).exists():
        raise FileNotFoundError(None, None, str(path))


def _fail_from(exc: Exception):
    if isinstance(exc, FileNotFoundError):
        _fail("file-not-found", str(exc.filename or exc), EXIT_IO)
    for klass, slug, code in _ERROR_SLUGS:
        if isinstance(exc, klass):
            _fail(slug, str(exc).replace("\n", " "), code)
    raise exc


@dataclass(frozen=True)
class RunConfig:
    """One JSON document aggregating all processing configuration.

    sampling_rate_hz has no sensible default and is required wherever a
    frame stack must be timestamped; trace files carry their own rate.
    """

    sampling_rate_hz: float | None = None
    stats: StatsConfig = StatsConfig()
    filter: FilterConfig = FilterConfig()
    calib: CalibConfig = CalibConfig()
    priors: NoiseParams = NoiseParams(0.0, 0.0)
    i0: float | None = None
    seed: int = 0

    @classmethod
    def from_json_dict(cls, raw: dict) -> "RunConfig":
        def build(klass, section, default):
            data = raw.get(section)
            if data is None:
                return default
            if not isinstance(data, dict):
                raise SpecInvalid(f"config section {section!r} must be an object")
            try:
                return klass(**data)
            except (TypeError, ValueError) as exc:
                raise SpecInvalid(f"bad config section {section!r}: {exc}") from exc

        known = {"sampling_rate_hz", "stats", "filter", "calib", "priors", "i0", "seed"}
        unknown = set(raw) - known
        if unknown:
            raise SpecInvalid(f"unknown config keys: {sorted(unknown)}")
        return cls(
            sampling_rate_hz=(
                None
                if raw.get("sampling_rate_hz") is None
                else float(raw["sampling_rate_hz"])
            ),
            stats=build(StatsConfig, "stats", StatsConfig()),
            filter=build(FilterConfig, "filter", FilterConfig()),
            calib=build(CalibConfig, "calib", CalibConfig()),
            priors=build(NoiseParams, "priors", NoiseParams(0.0, 0.0)),
            i0=None if raw.get("i0") is None else float(raw["i0"]),
            seed=int(raw.get("seed", 0)),
        )

    def to_json_dict(self) -> dict:
        return {
            "sampling_rate_hz": self.sampling_rate_hz,
            "stats": {
                "window_px": self.stats.window_px,
                "dark_offset_adu": self.stats.dark_offset_adu,
            },
            "filter": dataclasses.asdict(self.filter),
            "calib": dataclasses.asdict(self.calib),
            "priors": dataclasses.asdict(self.priors),
            "i0": self.i0,
            "seed": self.seed,
        }


def _load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise
    except (OSError, json.JSONDecodeError) as exc:
        raise SpecInvalid(f"cannot parse config {path}: {exc}") from exc
    return RunConfig.from_json_dict(raw)


def _echo_config(cfg: RunConfig, out_dir: Path) -> None:
    atomic_write_text(
        out_dir / "config_echo.json",
        json.dumps(cfg.to_json_dict(), indent=1, sort_keys=True) + "\n",
    )


def _write_json(path: Path, payload: dict) -> None:
    atomic_write_text(path, json.dumps(payload, indent=1, sort_keys=True) + "\n")


def _hemo_csv(trace: Trace, hemo) -> str:
    lines = ["t,cbf,cbv,cbf_hp,cbv_hp"]
    for row in zip(trace.t, hemo.cbf, hemo.cbv, hemo.cbf_hp, hemo.cbv_hp):
        lines.append(",".join(f"{v:.17g}" for v in row))
    return "\n".join(lines) + "\n"


@click.group()
@click.version_option(version=__version__, prog_name="scos")
def main():
    """Blood-flow extraction from speckle contrast traces with adaptive
    refinement of the camera-noise calibration."""


@main.command("frames-to-trace")
@click.argument("stack_path", type=click.Path())
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="RunConfig JSON file.")
@click.option("--out", "out_path", type=click.Path(), required=True,
              help="Output trace CSV path.")
def cmd_frames_to_trace(stack_path, config_path, out_path):
    """Reduce a raw frame stack to a contrast trace CSV."""
    try:
        _require_exists(stack_path)
        _require_exists(config_path)
        cfg = _load_config(config_path)
        stack = load_frame_stack(stack_path)
        if cfg.sampling_rate_hz is None:
            raise SpecInvalid(
                "sampling_rate_hz is required in the config to timestamp frames"
            )
        trace = stack_to_trace(
            stack, cfg.stats, cfg.sampling_rate_hz, source_label=Path(stack_path).stem
        )
        save_trace(trace, out_path)
    except Exception as exc:  # noqa: BLE001 - mapped to exit codes
        _fail_from(exc)
    click.echo(
        f"frames={stack.n_frames} mean_intensity={trace.mean_intensity.mean():.6g} "
        f"mean_k_raw_sq={trace.k_raw_sq.mean():.6g} -> {out_path}"
    )


@main.command("calibrate")
@click.argument("trace_path", type=click.Path())
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--out", "out_dir", type=click.Path(), required=True,
              help="Output directory.")
@click.option("--no-priors", is_flag=True,
              help="Start from zero gain and zero camera variance.")
def cmd_calibrate(trace_path, config_path, out_dir, no_priors):
    """Calibrate noise parameters on a trace and write waveforms + result."""
    try:
        _require_exists(trace_path)
        _require_exists(config_path)
        cfg = _load_config(config_path)
        trace = load_trace(trace_path)
        priors = NoiseParams(0.0, 0.0) if no_priors else cfg.priors
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _echo_config(cfg, out)

        hemo_pre = derive_hemo(trace, priors, cfg.filter, cfg.calib.kf2_floor, cfg.i0)
        vfsi_pre = vfsi(
            hemo_pre.cbf_hp, hemo_pre.cbv_hp, trace.meta.sampling_rate_hz,
            cfg.filter, assume_filtered=True,
        )
        result = calibrate(trace, priors, cfg.calib, cfg.filter)
        hemo_post = derive_hemo(
            trace, result.params_opt, cfg.filter, cfg.calib.kf2_floor, cfg.i0
        )

        _write_json(out / "result.json", result.to_json_dict())
        atomic_write_text(out / "hemo_pre.csv", _hemo_csv(trace, hemo_pre))
        atomic_write_text(out / "hemo_post.csv", _hemo_csv(trace, hemo_post))

        def norm(x):
            arr = np.asarray(x)
            scale = np.max(np.abs(arr)) or 1.0
            return arr / scale

        svg = waveform_figure(
            trace.t,
            [
                ("CBF pre", list(norm(hemo_pre.cbf_hp))),
                ("CBF post", list(norm(hemo_post.cbf_hp))),
                ("CBV", list(norm(hemo_post.cbv_hp))),
            ],
            "high-passed waveforms (normalized)",
        )
        atomic_write_text(out / "waveform.svg", svg)
    except Exception as exc:  # noqa: BLE001
        _fail_from(exc)
    click.echo(
        f"vfsi_pre={vfsi_pre:.4f} "
        f"vfsi_post={result.vfsi_final:.4f} improved={result.improved} "
        f"gain={result.params_opt.gain_adu_per_e:.6g} "
        f"cam_var={result.params_opt.cam_var_adu2:.6g}"
    )


@main.command("synth")
@click.argument("spec_path", type=click.Path(), required=False)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--seed", type=int, default=None, help="Override the generator seed.")
@click.option("--frames", is_flag=True, help="Also write the raw frame stack.")
def cmd_synth(spec_path, out_dir, seed, frames):
    """Generate a synthetic trace (default: the low-signal demo scenario)."""
    try:
        _require_exists(spec_path)
        spec = load_spec(spec_path) if spec_path else low_signal_scenario()
        if seed is not None:
            spec = replace(spec, rng_seed=seed)
        ds = generate(spec)
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_trace(ds.trace, out / "trace.csv")
        _write_json(out / "truth.json", _truth_payload(ds))
        if frames:
            save_frame_stack(generate_frames(spec), out / "frames.scos")
    except Exception as exc:  # noqa: BLE001
        _fail_from(exc)
    click.echo(
        f"samples={len(ds.trace)} signal_level="
        f"{ds.trace.meta.signal_level_e_per_px:.4g} -> {out_dir}"
    )


def _truth_payload(ds: SynthDataset) -> dict:
    return {
        "truth_flow": [float(v) for v in ds.truth_flow],
        "truth_params": dataclasses.asdict(ds.truth_params),
        "prior_params": dataclasses.asdict(ds.prior_params),
        "spec": ds.spec.to_json_dict(),
    }


def _sweep_dataset(args):
    spec, level, seed = args
    ds = generate(replace(
        spec,
        intensity_baseline_adu=level * spec.true_gain_adu_per_e,
        rng_seed=seed,
    ))
    return ds


@main.command("sweep")
@click.argument("spec_path", type=click.Path(), required=False)
@click.option("--levels", default="20,26,34,47,68,100,150,230,350,500",
              help="Comma-separated signal levels in e-/px.")
@click.option("--repeats", type=int, default=3, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--seed", type=int, default=0, show_default=True,
              help="Base seed; repeat r uses seed + r.")
@click.option("--jobs", type=int, default=1, show_default=True,
              help="Parallel dataset workers.")
@click.option("--no-priors", is_flag=True,
              help="Calibrate from zero priors instead of the injected ones.")
def cmd_sweep(spec_path, levels, repeats, out_dir, seed, jobs, no_priors):
    """Run a signal-level sweep study and fit pre/post thresholds."""
    try:
        _require_exists(spec_path)
        spec = load_spec(spec_path) if spec_path else low_signal_scenario()
        try:
            level_list = [float(v) for v in levels.split(",") if v.strip()]
        except ValueError as exc:
            raise SpecInvalid(f"bad --levels: {exc}") from exc
        if len(level_list) < 6:
            raise InsufficientPoints(
                f"need at least 6 signal levels, got {len(level_list)}"
            )
        if repeats < 1:
            raise SpecInvalid("repeats must be >= 1")

        jobs_args = [
            (spec, level, seed + r) for r in range(repeats) for level in level_list
        ]
        datasets = [_sweep_dataset(a) for a in jobs_args]

        study = run_sweep_study(
            datasets,
            priors_policy="zero" if no_priors else "dataset",
            jobs=jobs,
        )

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "config_echo.json", {
            "spec": spec.to_json_dict(),
            "levels": level_list,
            "repeats": repeats,
            "seed": seed,
            "jobs": jobs,
            "priors_policy": "zero" if no_priors else "dataset",
        })
        atomic_write_text(out / "sweep.csv", _sweep_csv(study.pre_points + study.post_points))
        _write_json(out / "threshold.json", {
            "pre": None if study.pre_fit is None else study.pre_fit.to_json_dict(),
            "post": None if study.post_fit is None else study.post_fit.to_json_dict(),
            "fit_errors": study.fit_errors,
        })
        panels = []
        for label, pts, fit in (
            ("pre-optimization", study.pre_points, study.pre_fit),
            ("post-optimization", study.post_points, study.post_fit),
        ):
            panels.append({
                "title": label,
                "levels": [p.signal_level_e_per_px for p in pts],
                "values": [p.vfsi_sq for p in pts],
                "fit": fit,
            })
        atomic_write_text(out / "threshold.svg", scatter_hinge_figure(panels))

        report = [
            f"datasets={len(datasets)} succeeded={len(datasets) - len(study.failures)}",
        ]
        for idx, msg in study.failures:
            report.append(f"dataset {idx}: {msg}")
        for name, msg in study.fit_errors.items():
            report.append(f"fit {name}: {msg}")
        atomic_write_text(out / "report.txt", "\n".join(report) + "\n")

        ok_fraction = (len(datasets) - len(study.failures)) / len(datasets)
        for name, fit in (("pre", study.pre_fit), ("post", study.post_fit)):
            if fit is not None:
                click.echo(
                    f"{name}: threshold={fit.threshold_e_per_px:.4g} e-/px "
                    f"reliable={fit.reliable}"
                )
            else:
                click.echo(f"{name}: no fit ({study.fit_errors.get(name, '')})")
        if ok_fraction < 0.8:
            _fail("sweep-failures",
                  f"only {ok_fraction:.0%} of datasets succeeded", EXIT_SWEEP)
    except Exception as exc:  # noqa: BLE001
        _fail_from(exc)


def _sweep_csv(points: list[SweepPoint]) -> str:
    lines = ["signal_level_e_per_px,vfsi_sq,fidelity,label"]
    for p in points:
        lines.append(
            f"{p.signal_level_e_per_px:.17g},{p.vfsi_sq:.17g},{p.fidelity:.17g},{p.label}"
        )
    return "\n".join(lines) + "\n"


if __name__ == "__main__":
    main()
