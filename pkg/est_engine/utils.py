from typing import Mapping

from pydantic import ValidationError
from typeguard import typechecked

from est_engine.exceptions import ConfigError, FieldErrorInfo


def dotted_path(loc: tuple) -> str:
    """Join a pydantic error location into a dotted path."""
    return ".".join(str(p) for p in loc)


@typechecked
def format_pydantic_error(e: ValidationError) -> str:
    """
    Return a human-readable string for any Pydantic ValidationError.

    Each line shows the dotted path to the field and the validation message.
    """
    parts = []
    for err in e.errors():
        parts.append(f"  - {dotted_path(err['loc'])}: {err['msg']}")
    return "\n".join(parts)


def _line_for(path: str, lines: Mapping[str, int]) -> int | None:
    # Longest known prefix wins: `scheduler.rates` answers for `scheduler.rates.2`.
    # Failing that, the first line of the deepest section the path is in.
    parts = path.split(".")
    for end in range(len(parts), 0, -1):
        prefix = ".".join(parts[:end])
        if prefix in lines:
            return lines[prefix]
        inside = [line for key, line in lines.items() if key.startswith(prefix + ".")]
        if inside:
            return min(inside)
    return None


@typechecked
def config_error_from_validation(
    e: ValidationError,
    message: str,
    prefix: str = "",
    lines: Mapping[str, int] | None = None,
) -> ConfigError:
    """
    Convert a pydantic ValidationError into a `ConfigError` with one
    field error per failure.

    Args:
        e: The validation error.
        message: High-level message of the new error.
        prefix: Dotted path prepended to every field path.
        lines: Maps dotted keys of a config file to their 1-based line,
            used to point each field error at its line.

    Returns:
        The `ConfigError`, for the caller to raise.
    """
    field_errors = []
    for err in e.errors():
        path = dotted_path(err["loc"])
        if prefix:
            path = f"{prefix}.{path}" if path else prefix
        line = _line_for(path, lines) if lines else None
        field_errors.append(FieldErrorInfo(path=path, message=err["msg"], line=line))
    return ConfigError(message, field_errors)
