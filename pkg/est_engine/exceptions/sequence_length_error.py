class SequenceLengthError(ValueError):
    """
    Raised when an input sequence is longer than the model's context.

    Args:
        length: Length of the offending sequence.
        seq_len: The model's configured sequence length.
    """

    def __init__(self, length: int, seq_len: int):
        self.length = length
        self.seq_len = seq_len
        super().__init__(
            f"Sequence of length {length} exceeds the model sequence length {seq_len}"
        )
