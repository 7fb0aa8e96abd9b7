class TapeConsumedError(RuntimeError):
    """
    Raised when a backward pass is requested on a tape that has already
    been consumed, or on a tensor that no tape recorded.
    """
