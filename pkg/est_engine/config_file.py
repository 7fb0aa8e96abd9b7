"""
Reader and writer for the flat `key = value` configuration format:

    # comment
    model.n_layers = 4
    scheduler.preset = practical-gpt2
    optimizer.betas = 0.9, 0.95

Dotted keys build nested sections. Values are Python literals, `true` or
`false`, or bare strings.
"""

from __future__ import annotations

import ast
from pathlib import Path
from typing import Any, Mapping, NamedTuple

from est_engine.exceptions import ConfigError, FieldErrorInfo


class ParsedConfig(NamedTuple):
    """Nested values plus the 1-based line each dotted key came from."""

    values: dict[str, Any]
    lines: dict[str, int]


def parse_value(text: str) -> Any:
    """Interpret one value: a literal, a boolean or a bare string."""
    lowered = text.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError, MemoryError, RecursionError):
        return text


def parse_config_text(
    text: str, source: str = "<string>", raw: bool = False
) -> ParsedConfig:
    """
    Parse configuration text.

    Args:
        text: The file contents.
        source: Name of the file, used in error messages.
        raw: Keep every value as a string instead of interpreting it.

    Raises:
        ConfigError: Listing every malformed line, duplicated key or key
            that is used both as a value and as a section.
    """
    values: dict[str, Any] = {}
    lines: dict[str, int] = {}
    errors: list[FieldErrorInfo] = []

    for number, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue

        key, sep, value = stripped.partition("=")
        key = key.strip()
        if not sep or not key:
            errors.append(
                FieldErrorInfo(
                    path="<line>", message="expected `key = value`", line=number
                )
            )
            continue
        if key in lines:
            errors.append(
                FieldErrorInfo(
                    path=key,
                    message=f"duplicate key, first set on line {lines[key]}",
                    line=number,
                )
            )
            continue

        parts = key.split(".")
        if any(not part for part in parts):
            errors.append(
                FieldErrorInfo(path=key, message="empty key segment", line=number)
            )
            continue

        section = values
        conflict = False
        for part in parts[:-1]:
            section = section.setdefault(part, {})
            if not isinstance(section, dict):
                conflict = True
                break
        if conflict or isinstance(section.get(parts[-1]), dict):
            errors.append(
                FieldErrorInfo(
                    path=key,
                    message="key is used both as a value and a section",
                    line=number,
                )
            )
            continue

        value = value.strip()
        section[parts[-1]] = value if raw else parse_value(value)
        lines[key] = number

    if errors:
        raise ConfigError(f"Malformed config {source}", errors)
    return ParsedConfig(values, lines)


def read_config_file(path: str | Path, raw: bool = False) -> ParsedConfig:
    """
    Read and parse a config file.

    Raises:
        ConfigError: If the file cannot be read or is malformed.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as ex:
        raise ConfigError(f"Config file {path} not found") from ex
    except (OSError, UnicodeDecodeError) as ex:
        raise ConfigError(f"Config file {path} cannot be read: {ex}") from ex
    return parse_config_text(text, str(path), raw)


def format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        return value
    return repr(value)


def flatten_values(values: Mapping[str, Any], prefix: str = "") -> dict[str, Any]:
    """Nested sections as one level of dotted keys. None values are left out."""
    flat: dict[str, Any] = {}
    for key, value in values.items():
        dotted = f"{prefix}{key}"
        if isinstance(value, Mapping):
            flat.update(flatten_values(value, f"{dotted}."))
        elif value is not None:
            flat[dotted] = value
    return flat


def dump_config(values: Mapping[str, Any]) -> str:
    """Write nested values in the format `parse_config_text` reads."""
    return "".join(
        f"{key} = {format_value(value)}\n"
        for key, value in flatten_values(values).items()
    )
