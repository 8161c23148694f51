"""Core data types and file I/O for contrast traces and raw frame stacks.

A Trace is the pipeline's central object: a uniformly sampled time series of
(K_raw^2, mean intensity) pairs in ADU. Traces persist as plain CSV with an
optional JSON sidecar carrying acquisition metadata; frame stacks use a small
binary container. All types are immutable after construction and safe to
share across threads.
"""

from __future__ import annotations

import csv
import json
import math
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    IoFailure,
    MissingColumn,
    NonMonotonicTime,
    NonPositiveIntensity,
    PixelOutOfRange,
    TruncatedFile,
)

TRACE_CSV_COLUMNS = ("t", "k_raw_sq", "mean_intensity")

# Uniform-sampling tolerance on per-row time stamps, in seconds.
TIME_TOLERANCE_S = 1e-6

_STACK_MAGIC = b"SCOS"
_STACK_VERSION = 1
_STACK_HEADER = struct.Struct("<4sHIIIH")
_VALID_BIT_DEPTHS = (8, 10, 12, 16)


@dataclass(frozen=True)
class TraceMeta:
    """Acquisition metadata attached to a trace.

    Attributes:
        sampling_rate_hz: Frame rate of the source recording (> 0).
        duration_s: Nominal recording length in seconds (> 0).
        source_label: Free-text provenance tag.
        signal_level_e_per_px: Mean detected photoelectrons per pixel, when a
            camera gain is known; None until populated.
    """

    sampling_rate_hz: float
    duration_s: float
    source_label: str = ""
    signal_level_e_per_px: float | None = None

    def __post_init__(self):
        if not (math.isfinite(self.sampling_rate_hz) and self.sampling_rate_hz > 0):
            raise ValueError(f"sampling_rate_hz must be > 0, got {self.sampling_rate_hz}")
        if not (math.isfinite(self.duration_s) and self.duration_s > 0):
            raise ValueError(f"duration_s must be > 0, got {self.duration_s}")
        if self.signal_level_e_per_px is not None and not (
            math.isfinite(self.signal_level_e_per_px) and self.signal_level_e_per_px >= 0
        ):
            raise ValueError("signal_level_e_per_px must be finite and >= 0")


@dataclass(frozen=True)
class TracePoint:
    """One sample: time in seconds, raw contrast squared, mean intensity in ADU."""

    t: float
    k_raw_sq: float
    mean_intensity: float


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Trace:
    """A validated, uniformly sampled contrast trace.

    Construction enforces: strictly increasing time stamps, uniform spacing
    within TIME_TOLERANCE_S, k_raw_sq >= 0, mean_intensity > 0, and (for
    non-empty traces) a sample count consistent with the metadata's
    sampling_rate_hz x duration_s to within one sample.
    """

    meta: TraceMeta
    t: np.ndarray
    k_raw_sq: np.ndarray
    mean_intensity: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "t", _readonly(self.t))
        object.__setattr__(self, "k_raw_sq", _readonly(self.k_raw_sq))
        object.__setattr__(self, "mean_intensity", _readonly(self.mean_intensity))
        n = self.t.size
        if self.k_raw_sq.size != n or self.mean_intensity.size != n:
            raise ValueError("t, k_raw_sq and mean_intensity must have equal length")
        for name in ("t", "k_raw_sq", "mean_intensity"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} contains non-finite values")
        bad = np.flatnonzero(self.mean_intensity <= 0)
        if bad.size:
            raise NonPositiveIntensity(row=int(bad[0]) + 1)
        if np.any(self.k_raw_sq < 0):
            raise ValueError("k_raw_sq must be >= 0")
        if n >= 2:
            dt = np.diff(self.t)
            bad = np.flatnonzero(dt <= 0)
            if bad.size:
                raise NonMonotonicTime(row=int(bad[0]) + 2)
            if np.max(np.abs(dt - np.median(dt))) > TIME_TOLERANCE_S:
                raise ValueError(
                    f"time stamps not uniformly spaced within {TIME_TOLERANCE_S} s"
                )
        if n > 0:
            expected = self.meta.sampling_rate_hz * self.meta.duration_s
            if abs(n - expected) > 1.0 + 1e-9:
                raise ValueError(
                    f"sample count {n} inconsistent with sampling_rate_hz x duration_s "
                    f"= {expected:.3f} (tolerance +/- 1)"
                )

    def __len__(self) -> int:
        return int(self.t.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trace):
            return NotImplemented
        return (
            self.meta == other.meta
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.k_raw_sq, other.k_raw_sq)
            and np.array_equal(self.mean_intensity, other.mean_intensity)
        )

    @property
    def points(self) -> tuple[TracePoint, ...]:
        return tuple(
            TracePoint(float(a), float(b), float(c))
            for a, b, c in zip(self.t, self.k_raw_sq, self.mean_intensity)
        )

    @classmethod
    def from_points(cls, meta: TraceMeta, points) -> "Trace":
        pts = list(points)
        return cls(
            meta=meta,
            t=np.array([p.t for p in pts], dtype=np.float64),
            k_raw_sq=np.array([p.k_raw_sq for p in pts], dtype=np.float64),
            mean_intensity=np.array([p.mean_intensity for p in pts], dtype=np.float64),
        )


@dataclass(frozen=True, eq=False)
class FrameStack:
    """A stack of raw camera frames in ADU.

    frames has shape (n_frames, height, width), dtype uint16, with every pixel
    value below 2**bit_depth.
    """

    width: int
    height: int
    n_frames: int
    bit_depth: int
    frames: np.ndarray = field(repr=False)

    def __post_init__(self):
        if min(self.width, self.height, self.n_frames) < 1:
            raise ValueError("width, height and n_frames must be >= 1")
        if self.bit_depth not in _VALID_BIT_DEPTHS:
            raise ValueError(f"bit_depth must be one of {_VALID_BIT_DEPTHS}")
        frames = np.ascontiguousarray(self.frames, dtype=np.uint16)
        if frames.shape != (self.n_frames, self.height, self.width):
            raise ValueError(
                f"frames shape {frames.shape} does not match "
                f"(n_frames, height, width) = ({self.n_frames}, {self.height}, {self.width})"
            )
        limit = 1 << self.bit_depth
        if frames.size and int(frames.max()) >= limit:
            idx = np.unravel_index(int(np.argmax(frames)), frames.shape)
            raise PixelOutOfRange(
                f"pixel {tuple(int(i) for i in idx)} = {int(frames.max())} "
                f"exceeds bit depth {self.bit_depth}"
            )
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)

    def __eq__(self, other) -> bool:
        if not isinstance(other, FrameStack):
            return NotImplemented
        return (
            (self.width, self.height, self.n_frames, self.bit_depth)
            == (other.width, other.height, other.n_frames, other.bit_depth)
            and np.array_equal(self.frames, other.frames)
        )


def _atomic_write_bytes(path: Path, data: bytes) -> None:
    path = Path(path)
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=path.name + ".")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def atomic_write_text(path, text: str) -> None:
    """Write text atomically (temp file + rename), UTF-8, LF line endings."""
    _atomic_write_bytes(Path(path), text.encode("utf-8"))


def _meta_sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".meta.json")


def save_trace(trace: Trace, path) -> None:
    """Persist a trace as CSV plus a metadata sidecar.

    Values are formatted with 17 significant digits so that a save/load
    round-trip reproduces every float64 bit-exactly. The sidecar
    ``<path>.meta.json`` carries the TraceMeta fields; the CSV itself follows
    the plain three-column interchange format.
    """
    path = Path(path)
    lines = [",".join(TRACE_CSV_COLUMNS)]
    for a, b, c in zip(trace.t, trace.k_raw_sq, trace.mean_intensity):
        lines.append(f"{a:.17g},{b:.17g},{c:.17g}")
    atomic_write_text(path, "\n".join(lines) + "\n")
    meta = {
        "sampling_rate_hz": trace.meta.sampling_rate_hz,
        "duration_s": trace.meta.duration_s,
        "source_label": trace.meta.source_label,
        "signal_level_e_per_px": trace.meta.signal_level_e_per_px,
    }
    atomic_write_text(_meta_sidecar(path), json.dumps(meta, sort_keys=True, indent=1) + "\n")


def load_trace(path, format: str = "csv") -> Trace:
    """Load and validate a trace from CSV.

    Metadata is taken from the ``<path>.meta.json`` sidecar when present;
    otherwise sampling rate and duration are derived from the time stamps
    (which requires at least two rows).

    Raises:
        MissingColumn: header lacks one of t, k_raw_sq, mean_intensity.
        NonMonotonicTime: time stamps not strictly increasing (names the row).
        NonPositiveIntensity: a row has mean_intensity <= 0 (names the row).
        IoFailure: unreadable file, unparseable number, or underivable metadata.
    """
    if format != "csv":
        raise IoFailure(f"unsupported trace format {format!r}")
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc

    reader = csv.reader(text.splitlines())
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise IoFailure(f"{path}: empty file") from None
    for col in TRACE_CSV_COLUMNS:
        if col not in header:
            raise MissingColumn(col)
    idx = [header.index(col) for col in TRACE_CSV_COLUMNS]

    t, k2, inten = [], [], []
    for row_no, row in enumerate(reader, start=1):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        try:
            vals = [float(row[i]) for i in idx]
        except (ValueError, IndexError) as exc:
            raise IoFailure(f"{path}: unparseable row {row_no}: {row!r}") from exc
        if vals[2] <= 0:
            raise NonPositiveIntensity(row=row_no)
        if t and vals[0] <= t[-1]:
            raise NonMonotonicTime(row=row_no)
        t.append(vals[0])
        k2.append(vals[1])
        inten.append(vals[2])

    meta = _load_meta(path, t)
    return Trace(
        meta=meta,
        t=np.asarray(t, dtype=np.float64),
        k_raw_sq=np.asarray(k2, dtype=np.float64),
        mean_intensity=np.asarray(inten, dtype=np.float64),
    )


def _load_meta(path: Path, t: list[float]) -> TraceMeta:
    sidecar = _meta_sidecar(path)
    if sidecar.exists():
        try:
            raw = json.loads(sidecar.read_text(encoding="utf-8"))
            return TraceMeta(
                sampling_rate_hz=float(raw["sampling_rate_hz"]),
                duration_s=float(raw["duration_s"]),
                source_label=str(raw.get("source_label", "")),
                signal_level_e_per_px=(
                    None
                    if raw.get("signal_level_e_per_px") is None
                    else float(raw["signal_level_e_per_px"])
                ),
            )
        except (OSError, KeyError, ValueError, TypeError) as exc:
            raise IoFailure(f"bad metadata sidecar {sidecar}: {exc}") from exc
    if len(t) < 2:
        raise IoFailure(
            f"{path}: no metadata sidecar and too few rows to derive a sampling rate"
        )
    dt = float(np.median(np.diff(np.asarray(t))))
    fs = 1.0 / dt
    return TraceMeta(sampling_rate_hz=fs, duration_s=len(t) / fs, source_label=path.stem)


def save_frame_stack(stack: FrameStack, path) -> None:
    """Write a frame stack in the scos binary container format.

    Layout: magic ``SCOS`` | u16 version = 1 | u32 width | u32 height |
    u32 n_frames | u16 bit_depth | payload of n_frames x height x width
    little-endian u16 pixels, row-major.
    """
    header = _STACK_HEADER.pack(
        _STACK_MAGIC, _STACK_VERSION, stack.width, stack.height,
        stack.n_frames, stack.bit_depth,
    )
    payload = np.ascontiguousarray(stack.frames, dtype="<u2").tobytes()
    _atomic_write_bytes(Path(path), header + payload)


def load_frame_stack(path) -> FrameStack:
    """Read and validate a frame stack from the scos binary container.

    Raises:
        BadMagic: wrong leading magic bytes or unsupported version.
        TruncatedFile: payload shorter than the header declares.
        PixelOutOfRange: a pixel exceeds the declared bit depth.
    """
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if len(blob) < _STACK_HEADER.size:
        if blob[:4] != _STACK_MAGIC:
            raise BadMagic(f"{path}: not a scos frame-stack file")
        raise TruncatedFile(f"{path}: header incomplete")
    magic, version, width, height, n_frames, bit_depth = _STACK_HEADER.unpack_from(blob)
    if magic != _STACK_MAGIC:
        raise BadMagic(f"{path}: bad magic {magic!r}")
    if version != _STACK_VERSION:
        raise BadMagic(f"{path}: unsupported version {version}")
    n_px = n_frames * height * width
    need = _STACK_HEADER.size + 2 * n_px
    if len(blob) < need:
        raise TruncatedFile(
            f"{path}: expected {need} bytes for {n_frames} frames, got {len(blob)}"
        )
    pixels = np.frombuffer(blob, dtype="<u2", count=n_px, offset=_STACK_HEADER.size)
    frames = pixels.reshape(n_frames, height, width).astype(np.uint16)
    return FrameStack(
        width=width, height=height, n_frames=n_frames, bit_depth=bit_depth, frames=frames
    )
