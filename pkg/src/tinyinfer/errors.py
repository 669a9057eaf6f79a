"""Exception hierarchy for the engine.

The benchmark CLI maps these onto its exit-code contract: I/O and file
format problems exit 2, shape/config problems exit 3.
"""


class TinyInferError(Exception):
    """Base class for all engine errors."""


class SizeError(TinyInferError):
    """Tensor shape has a non-positive extent or overflows the index range."""


class BoundsError(TinyInferError):
    """Element index or channel slice outside the tensor."""


class ShapeError(TinyInferError):
    """Operator inputs/outputs have incompatible shapes."""


class ArgumentError(TinyInferError):
    """Invalid operator argument (e.g. top_k with k=0)."""


class BuildError(TinyInferError):
    """Graph construction failed (missing or mis-shaped weight)."""


class ReportError(TinyInferError):
    """Timing report contains an entry the grouping does not understand."""


class FormatError(TinyInferError):
    """File does not look like the expected container (bad magic, bad sizes)."""


class VersionError(FormatError):
    """Container version is not supported."""


class CorruptionError(FormatError):
    """Container is structurally damaged (truncated or inconsistent record)."""
