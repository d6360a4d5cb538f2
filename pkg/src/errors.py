"""Error types shared by every laboratory module."""

from typing import Any, Dict, Optional


class LabError(Exception):
    """Base error carrying a stable error code."""

    code = "INTERNAL_ERROR"

    def __init__(self, message: str, **context: Any):
        super().__init__(message)
        self.message = message
        self.context = context

    def to_payload(self, run_id: Optional[str] = None) -> Dict[str, Any]:
        """Render the error in the report/manifest error format."""
        payload: Dict[str, Any] = {
            "error": {"code": self.code, "message": self.message},
            "run_id": run_id,
        }
        if self.context:
            payload["error"]["context"] = {key: str(value) for key, value in self.context.items()}
        return payload


class ConfigurationError(LabError):
    """Invalid parameters, missing kernel metadata or unsupported combinations."""

    code = "INVALID_ARGUMENT"


class DomainError(LabError):
    """A precondition on an argument's domain was violated."""

    code = "DOMAIN_ERROR"


class LadderRangeError(LabError):
    """A lag or prefix length lies beyond what the index ladder decides."""

    code = "RANGE_ERROR"


class DiagnosticError(LabError):
    """A kernel evaluation produced a non-finite value."""

    code = "NON_FINITE_KERNEL"


class DigitResourceError(LabError):
    """A bit stream was asked for more digits than its materialization cap."""

    code = "DIGIT_CAP_EXCEEDED"


class AssertionFailure(LabError):
    """A built-in experiment assertion did not hold."""

    code = "ASSERTION_FAILED"
