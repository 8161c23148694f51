"""Exception hierarchy for the scos package.

Every rejection of input data carries enough context (row, frame or tile
index) to locate the offending record; nothing is dropped silently.
"""


class ScosError(Exception):
    """Base class for all scos errors."""


# --- trace and frame-stack ingestion -----------------------------------------

class MissingColumn(ScosError):
    """A required CSV column is absent."""

    def __init__(self, column: str):
        self.column = column
        super().__init__(f"missing required column {column!r}")


class NonMonotonicTime(ScosError):
    """Time stamps are not strictly increasing."""

    def __init__(self, row: int, message: str = ""):
        self.row = row
        super().__init__(message or f"time not strictly increasing at row {row}")


class NonPositiveIntensity(ScosError):
    """A trace row carries mean_intensity <= 0."""

    def __init__(self, row: int):
        self.row = row
        super().__init__(f"mean_intensity must be > 0 (row {row})")


class IoFailure(ScosError):
    """File could not be read or written."""


class BadMagic(ScosError):
    """Frame-stack file does not start with the expected magic bytes."""


class TruncatedFile(ScosError):
    """Frame-stack file ends before the declared payload is complete."""


class PixelOutOfRange(ScosError):
    """A pixel value exceeds the declared bit depth."""


# --- frame statistics ---------------------------------------------------------

class FrameTooSmall(ScosError):
    """Frame dimensions are below the spatial window size."""


class ZeroMeanTile(ScosError):
    """A spatial tile has nonpositive mean after preprocessing."""


# --- signal processing --------------------------------------------------------

class TooShort(ScosError):
    """Sequence is too short for the requested filtering operation."""


class CutoffAboveNyquist(ScosError):
    """High-pass cutoff is at or above the Nyquist frequency."""


class LengthMismatch(ScosError):
    """Two sequences that must align have different lengths."""


class ZeroVariance(ScosError):
    """A signal required to be non-constant has (effectively) zero variance."""


class NonPositiveBaseline(ScosError):
    """Baseline intensity for the optical-density computation is <= 0."""


# --- calibration ---------------------------------------------------------------

class NonFiniteLoss(ScosError):
    """The optimizer encountered a non-finite loss value."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)


# --- synthetic data ------------------------------------------------------------

class SpecInvalid(ScosError):
    """A synthetic-data generator spec violates its constraints."""


# --- analysis -------------------------------------------------------------------

class InsufficientPoints(ScosError):
    """Not enough sweep points (or signal-level spread) for a threshold fit."""


class DegenerateSpread(ScosError):
    """Sweep points do not identify a two-segment fit (too few distinct levels)."""
