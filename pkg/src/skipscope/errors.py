"""Error taxonomy shared by all skipscope modules.

Every exception carries a stable machine-readable ``code`` so the CLI can
emit structured error lines and map failures to exit codes.
"""

from __future__ import annotations


class SkipscopeError(Exception):
    """Base class; ``code`` identifies the failure class."""

    code = "ERROR"

    def __init__(self, message: str, **context):
        super().__init__(message)
        self.context = context

    def __str__(self) -> str:
        base = super().__str__()
        if self.context:
            detail = ", ".join(f"{k}={v!r}" for k, v in sorted(self.context.items()))
            return f"{base} ({detail})"
        return base


class FormatRejected(SkipscopeError):
    """Input violates a declared format or invariant before any work is done."""

    code = "FORMAT_REJECTED"


class TraceIoError(SkipscopeError):
    """Underlying stream failed or ended before the payload was complete."""

    code = "IO_ERROR"


class ValidationFailed(SkipscopeError):
    """Parsed content violates the type invariants of the trace container."""

    code = "VALIDATION_ERROR"


class DegenerateVector(SkipscopeError):
    """A zero-norm vector reached a cosine computation."""

    code = "DEGENERATE_VECTOR"


class EmptyModality(SkipscopeError):
    """An operation required tokens of a modality that has none."""

    code = "EMPTY_MODALITY"


class ShapeMismatch(SkipscopeError):
    code = "SHAPE_MISMATCH"


class MissingMetric(SkipscopeError):
    """A bound needed the joint's dissimilarity and none was attached."""

    code = "MISSING_METRIC"


class InvalidArgument(SkipscopeError):
    code = "INVALID_ARGUMENT"


class MissingQuery(SkipscopeError):
    code = "MISSING_QUERY"


class SolverStalled(SkipscopeError):
    """The unique-information solver failed to converge within budget."""

    code = "SOLVER_STALLED"


class PremiseFailed(SkipscopeError):
    """A theorem check was handed an instance whose premise does not hold.

    Not a theorem failure: suites count these separately from violations.
    """

    code = "PREMISE_FAILED"


class DomainViolation(SkipscopeError):
    code = "DOMAIN_VIOLATION"
