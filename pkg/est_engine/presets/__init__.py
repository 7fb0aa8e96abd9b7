from est_engine.presets.preset import Preset, list_presets

__all__ = [
    "Preset",
    "list_presets",
]
