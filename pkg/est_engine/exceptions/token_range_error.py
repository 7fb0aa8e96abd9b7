class TokenRangeError(IndexError):
    """
    Raised when a token id falls outside the vocabulary.

    Args:
        position: Flat position of the first offending id.
        value: The offending id.
        vocab: Vocabulary size the ids were checked against.
    """

    def __init__(self, position: int, value: int, vocab: int):
        self.position = position
        self.value = value
        self.vocab = vocab
        super().__init__(
            f"Token id {value} at position {position} is outside [0, {vocab})"
        )
