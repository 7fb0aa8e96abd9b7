class CorpusError(ValueError):
    """
    Raised when a training or evaluation corpus cannot be used.

    Args:
        path: The corpus path, or a description of the in-memory corpus.
        reason: Why the corpus was rejected.
    """

    def __init__(self, path: str, reason: str):
        self.path = path
        self.reason = reason
        super().__init__(f"Corpus {path}: {reason}")
