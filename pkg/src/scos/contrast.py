"""Spatial speckle contrast statistics on raw frames.

The raw contrast squared of a frame is the spatial variance of pixel
intensities over their squared mean. To suppress slow illumination profiles
(speckle inhomogeneity) the frame is cut into non-overlapping square tiles
and the per-tile variance/mean^2 ratios are averaged; an optional flat-field
profile can be divided out first. Mean intensity is reported in physical ADU
(dark offset removed, no flat-field normalization) so downstream noise terms
keep their units.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FrameTooSmall, ZeroMeanTile
from .trace import FrameStack, Trace, TraceMeta


@dataclass(frozen=True, eq=False)
class StatsConfig:
    """Configuration for per-frame contrast statistics.

    Attributes:
        window_px: Side of the square tiles, odd and >= 3.
        flatfield: Optional per-pixel mean-intensity profile (strictly
            positive, same shape as the frames) divided out before tiling.
        dark_offset_adu: Constant dark level subtracted from every pixel.
    """

    window_px: int = 7
    flatfield: np.ndarray | None = None
    dark_offset_adu: float = 0.0

    def __post_init__(self):
        if self.window_px < 3 or self.window_px % 2 == 0:
            raise ValueError(f"window_px must be odd and >= 3, got {self.window_px}")
        if self.dark_offset_adu < 0:
            raise ValueError("dark_offset_adu must be >= 0")
        if self.flatfield is not None:
            ff = np.ascontiguousarray(self.flatfield, dtype=np.float64)
            if ff.ndim != 2 or not np.all(ff > 0):
                raise ValueError("flatfield must be a 2-D array with strictly positive entries")
            ff.setflags(write=False)
            object.__setattr__(self, "flatfield", ff)


def _tile_view(img: np.ndarray, w: int) -> np.ndarray:
    """Non-overlapping w x w tiles as rows; edge remainders are discarded."""
    ny, nx = img.shape[0] // w, img.shape[1] // w
    trimmed = img[: ny * w, : nx * w]
    return trimmed.reshape(ny, w, nx, w).transpose(0, 2, 1, 3).reshape(ny * nx, w * w)


def frame_k_raw_sq(frame: np.ndarray, cfg: StatsConfig) -> tuple[float, float]:
    """Raw speckle contrast squared and mean intensity of one frame.

    Pixels are dark-offset subtracted, optionally flat-field normalized, and
    tiled; k_raw_sq is the tile-average of unbiased variance / mean^2. The
    returned mean intensity is the global mean of offset-subtracted pixels
    only, keeping it in detector ADU.

    Raises:
        FrameTooSmall: either frame dimension is below window_px.
        ZeroMeanTile: global mean, or any tile mean, is <= 0 after
            preprocessing (aborts rather than skipping, to avoid low-light bias).
    """
    img = np.asarray(frame, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("frame must be a 2-D array")
    w = cfg.window_px
    if img.shape[0] < w or img.shape[1] < w:
        raise FrameTooSmall(
            f"frame {img.shape} smaller than window {w}x{w}"
        )
    work = img - cfg.dark_offset_adu
    mean_intensity = float(work.mean())
    if mean_intensity <= 0:
        raise ZeroMeanTile("global mean <= 0 after dark-offset subtraction")
    if cfg.flatfield is not None:
        if cfg.flatfield.shape != img.shape:
            raise ValueError(
                f"flatfield shape {cfg.flatfield.shape} does not match frame {img.shape}"
            )
        norm = work / cfg.flatfield
    else:
        norm = work

    tiles = _tile_view(norm, w)
    means = tiles.mean(axis=1)
    bad = np.flatnonzero(means <= 0)
    if bad.size:
        raise ZeroMeanTile(f"tile {int(bad[0])} mean <= 0 after preprocessing")
    variances = tiles.var(axis=1, ddof=1)
    k_raw_sq = float(np.mean(variances / means**2))
    return k_raw_sq, mean_intensity


def stack_to_trace(
    stack: FrameStack,
    cfg: StatsConfig,
    sampling_rate_hz: float,
    source_label: str = "",
) -> Trace:
    """Reduce a frame stack to a contrast trace, one point per frame.

    Frame i lands at t = i / sampling_rate_hz. Per-frame errors are re-raised
    with the frame index attached.
    """
    if sampling_rate_hz <= 0:
        raise ValueError("sampling_rate_hz must be > 0")
    n = stack.n_frames
    k2 = np.empty(n)
    inten = np.empty(n)
    for i in range(n):
        try:
            k2[i], inten[i] = frame_k_raw_sq(stack.frames[i], cfg)
        except (FrameTooSmall, ZeroMeanTile) as exc:
            raise type(exc)(f"frame {i}: {exc}") from exc
    meta = TraceMeta(
        sampling_rate_hz=sampling_rate_hz,
        duration_s=n / sampling_rate_hz,
        source_label=source_label,
    )
    return Trace(
        meta=meta,
        t=np.arange(n, dtype=np.float64) / sampling_rate_hz,
        k_raw_sq=k2,
        mean_intensity=inten,
    )
