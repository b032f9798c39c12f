"""Error types carrying stable tokens for machine-readable failure reporting."""

from __future__ import annotations

__all__ = [
    "ComputationError",
    "FluxMismatchError",
    "RangeTooLargeError",
    "BoundaryDepthError",
    "BlochFieldError",
    "BlochDisorderError",
    "NoGapError",
    "NotChiralError",
    "AchViolatedError",
    "DeltaInSpectrumError",
    "AmbiguousKernelError",
    "DepthCutError",
    "WindowError",
    "GapClosedError",
    "CrossingOnGridError",
    "NotAntisymmetricError",
    "OddDimensionError",
]


class ComputationError(Exception):
    """Precondition failure with a stable token (CLI exit code 2)."""

    token = "error"

    def __init__(self, message: str | None = None):
        super().__init__(message if message is not None else self.token)


class FluxMismatchError(ComputationError):
    token = "flux-mismatch"


class RangeTooLargeError(ComputationError):
    token = "range-too-large"


class BoundaryDepthError(ComputationError):
    token = "boundary-depth"


class BlochFieldError(ComputationError):
    token = "bloch-requires-zero-field"


class BlochDisorderError(ComputationError):
    token = "bloch-requires-clean"


class NoGapError(ComputationError):
    token = "no-gap"


class NotChiralError(ComputationError):
    token = "not-chiral"


class AchViolatedError(ComputationError):
    token = "ach-violated"


class DeltaInSpectrumError(ComputationError):
    token = "delta-in-spectrum"


class AmbiguousKernelError(ComputationError):
    token = "ambiguous-kernel"


class DepthCutError(ComputationError):
    token = "depth-cut-too-small"


class WindowError(ComputationError):
    token = "window-too-large"


class GapClosedError(ComputationError):
    token = "gap-closed-on-loop"


class CrossingOnGridError(ComputationError):
    token = "crossing-on-grid-node"


class NotAntisymmetricError(ComputationError):
    token = "not-antisymmetric"


class OddDimensionError(ComputationError):
    token = "odd-dimension"
