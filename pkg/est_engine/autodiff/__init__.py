from est_engine.autodiff import ops
from est_engine.autodiff.tensor import (
    PRECISIONS,
    ComputationTape,
    Precision,
    TapeEntry,
    Tensor,
    active_tape,
    backward,
    get_dtype,
    get_precision,
    set_precision,
)

__all__ = [
    "ComputationTape",
    "PRECISIONS",
    "Precision",
    "TapeEntry",
    "Tensor",
    "active_tape",
    "backward",
    "get_dtype",
    "get_precision",
    "ops",
    "set_precision",
]
