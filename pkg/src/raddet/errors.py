"""Exception hierarchy shared across the pipeline.

Every domain failure raises a subclass of :class:`RaddetError` so the CLI can
map them uniformly to exit status 1; usage errors are left to the CLI layer.
"""


class RaddetError(Exception):
    """Base class for all domain errors."""


class SchemaError(RaddetError):
    """A document or message does not conform to its declared schema."""


class CoverageError(RaddetError):
    """Timeline spans leave a gap or overlap after rounding.

    Carries the first offending boundary in milliseconds.
    """

    def __init__(self, message: str, boundary_ms: int | None = None):
        super().__init__(message)
        self.boundary_ms = boundary_ms


class LabelError(RaddetError):
    """Unknown label string in an annotation document."""


class RangeError(RaddetError):
    """A query interval falls outside the timeline it targets."""


class ArgumentError(RaddetError):
    """Invalid argument value for an operation."""


class SegmentOrderError(RaddetError):
    """Transcript segments are unsorted or overlapping."""


class BackendUnavailable(RaddetError):
    """A backend process or endpoint cannot be reached."""


class ProtocolError(RaddetError):
    """A backend response violates the wire schema."""


class Timeout(RaddetError):
    """A backend request exceeded its deadline."""


class PartialBatch(RaddetError):
    """A classify response did not return one prediction per input."""


class TrainingDiverged(RaddetError):
    """Backend-reported training failure."""


class MissingPrediction(RaddetError):
    """A window has no prediction during quantization."""


class InfeasiblePolicy(RaddetError):
    """The corpus cannot satisfy the split policy.

    The message names the first unsatisfiable constraint.
    """


class IoError(RaddetError):
    """Filesystem failure while emitting artifacts."""
