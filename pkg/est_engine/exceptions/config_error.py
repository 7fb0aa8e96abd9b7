from pydantic import BaseModel

DEFAULT_FAILURE_MESSAGE = "Invalid configuration"


class FieldErrorInfo(BaseModel):
    """Describes a single invalid configuration field."""

    path: str
    """Dotted path of the field, e.g. `scheduler.stages.2.end_step`."""

    message: str
    """The specific error message."""

    line: int | None = None
    """1-based line in the config file the field was read from, if known."""


class ConfigError(ValueError):
    """
    Raised when a configuration, preset or scheduler is invalid.

    Args:
        message: A high-level error message. Defaults to a generic
            configuration failure message.
        field_errors: An optional list of per-field errors. Each one is
            listed in the final message with its path and line.
    """

    def __init__(
        self,
        message: str = DEFAULT_FAILURE_MESSAGE,
        field_errors: list[FieldErrorInfo] | None = None,
    ):
        self.validation_error = message
        """A high-level error message describing the failure."""

        self.field_errors = field_errors or []
        """Errors related to individual configuration fields."""

        super().__init__(self._format_message())

    def _format_message(self) -> str:
        """Returns the high-level message followed by each field error."""
        parts: list[str] = [self.validation_error]

        for err in self.field_errors:
            location = f"line {err.line}: " if err.line is not None else ""
            parts.append(f"  - {location}{err.path}: {err.message}")

        return "\n".join(parts)
