from typing import Callable, TypeAlias

import numpy as np

IndexSet: TypeAlias = tuple[int, ...]
"""A sorted, duplicate-free tuple of 0-based indices."""

RateTriple: TypeAlias = tuple[float, float, float]
"""Sampling rates in the order (p_heads, p_mlp, p_layers)."""

GradFn = Callable[[np.ndarray], np.ndarray]
"""
Maps a flat parameter vector to the flat gradient of a fixed loss at that
point.
"""
