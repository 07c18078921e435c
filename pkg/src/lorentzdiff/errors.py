"""Exception types shared across the package.

Every error raised deliberately by this library derives from Error, so
callers can catch the whole family with one except clause.  The names
mirror the failure modes of the numerical pipeline: bad dimensions or
chart points, a rejected integrator step, a path that had to be abandoned,
a group element outside the domain of the Iwasawa factorization, and so on.
"""


class Error(Exception):
    """Base class for all lorentzdiff exceptions."""


class DimensionError(Error):
    """Array arguments have incompatible or unsupported dimensions."""


class DomainError(Error):
    """A point lies outside the chart or parameter domain (e.g. t <= 0)."""


class StateInvalid(Error):
    """A phase-space state violates its defining constraints."""


class StepRejected(Error):
    """One integrator step produced an unusable update; retry with smaller ds."""


class InternalError(Error):
    """An invariant the code relies on failed; indicates a bug, not bad input."""


class PathAborted(Error):
    """A path exhausted its step-halving budget.

    Carries the partial record produced so far in the ``record`` attribute.
    """

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record


class UnsupportedGroup(Error):
    """The requested matrix group tag is not one of the supported families."""


class DecompositionOutOfDomain(Error):
    """The group element admits no N·A·K factorization (light-cone pairing
    not positive)."""


class ExtractionDegenerate(Error):
    """Angular extraction hit a numerically degenerate frame column."""


class ClassificationAmbiguous(Error):
    """Tail behaviour of the warp function could not be classified."""


class InsufficientData(Error):
    """Too few samples or paths for the requested statistic."""


class ConfigError(Error):
    """Configuration file is malformed, contradictory, or has unknown keys."""
