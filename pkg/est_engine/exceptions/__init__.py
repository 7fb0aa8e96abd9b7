from est_engine.exceptions.checkpoint_error import CheckpointError
from est_engine.exceptions.config_error import ConfigError, FieldErrorInfo
from est_engine.exceptions.corpus_error import CorpusError
from est_engine.exceptions.insufficient_log_error import InsufficientLogError
from est_engine.exceptions.invalid_mask_error import InvalidMaskError
from est_engine.exceptions.non_finite_error import NonFiniteError
from est_engine.exceptions.sequence_length_error import SequenceLengthError
from est_engine.exceptions.shape_error import ShapeError
from est_engine.exceptions.step_range_error import StepRangeError
from est_engine.exceptions.stream_terminated_error import StreamTerminatedError
from est_engine.exceptions.tape_consumed_error import TapeConsumedError
from est_engine.exceptions.token_range_error import TokenRangeError

__all__ = [
    "CheckpointError",
    "ConfigError",
    "CorpusError",
    "FieldErrorInfo",
    "InsufficientLogError",
    "InvalidMaskError",
    "NonFiniteError",
    "SequenceLengthError",
    "ShapeError",
    "StepRangeError",
    "StreamTerminatedError",
    "TapeConsumedError",
    "TokenRangeError",
]
