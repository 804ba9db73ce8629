"""Exception hierarchy shared across the package."""


class SlicesegError(Exception):
    """Base class for all package errors."""


class ShapeError(SlicesegError):
    """Operand shapes are incompatible with the requested operation."""


class DomainError(SlicesegError):
    """A numeric input lies outside the operation's documented domain."""


class ContractError(SlicesegError):
    """An API precondition was violated by the caller."""


class ConfigError(SlicesegError):
    """Invalid or unknown configuration content."""


class FormatError(SlicesegError):
    """Malformed on-disk payload. Carries the byte offset of the defect."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class UnsupportedVersionError(FormatError):
    """On-disk payload declares a version this build cannot read."""


class EvaluationError(SlicesegError):
    """Evaluation cannot proceed (e.g. ground-truth masks missing)."""
