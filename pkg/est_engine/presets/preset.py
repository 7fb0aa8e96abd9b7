from __future__ import annotations

import importlib.resources
from json import load

from pydantic import BaseModel, ConfigDict

from est_engine.exceptions import ConfigError
from est_engine.types import RateTriple

PRESETS_PACKAGE = "est_engine.presets"


class Preset(BaseModel):
    """
    A named sampling scheduler shipped with the package.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    description: str
    """
    What the scheduler is for.
    """

    end_steps: list[int]
    """
    Last step of each stage, at full scale.
    """

    rates: list[RateTriple]
    """
    `(p_heads, p_mlp, p_layers)` of each stage.
    """

    @classmethod
    def get(cls, name: str) -> Preset:
        """
        Gets a named preset.

        Args:
            name: Preset name, e.g. "practical-gpt2".

        Returns:
            The preset.

        Raises:
            ConfigError: Raised if the specified preset does not exist.
        """

        presets = importlib.resources.files(PRESETS_PACKAGE)
        file = presets / f"{name}.json"

        try:
            with file.open("r") as f:
                values = load(f)
                return Preset(**values)

        except FileNotFoundError as ex:
            raise ConfigError(
                f'Preset "{name}" not found, expected one of {list_presets()}'
            ) from ex


def list_presets() -> list[str]:
    """Names of every packaged preset, sorted."""
    presets = importlib.resources.files(PRESETS_PACKAGE)
    return sorted(
        entry.name.removesuffix(".json")
        for entry in presets.iterdir()
        if entry.name.endswith(".json")
    )
