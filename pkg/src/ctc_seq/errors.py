"""Exception hierarchy shared across the pipeline.

The CLI maps :class:`DataError` to exit code 3 and :class:`ContractViolation`
to exit code 4.
"""


class CtcSeqError(Exception):
    """Base class for all package errors."""


class DataError(CtcSeqError):
    """Input data is malformed, unreadable or unusable."""


class ManifestError(DataError):
    def __init__(self, message, line_no=None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class UnsupportedFormatError(DataError):
    """WAV file is valid RIFF but not 16-bit mono PCM."""


class CorruptFileError(DataError):
    """WAV file is truncated or not a RIFF/WAVE container."""


class TooShortError(DataError):
    """Audio clip is shorter than one analysis window."""


class InfeasibleTargetError(DataError):
    """Label sequence needs more frames than the lattice provides."""

    def __init__(self, num_frames, min_frames):
        super().__init__(
            f"input features smaller than the length of output labels: "
            f"{num_frames} frames < {min_frames} required"
        )
        self.num_frames = num_frames
        self.min_frames = min_frames


class ContractViolation(CtcSeqError):
    """An API precondition was violated (shapes, normalization, mismatched artifacts)."""
