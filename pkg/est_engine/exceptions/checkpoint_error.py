class CheckpointError(ValueError):
    """
    Raised when a checkpoint directory is missing, corrupt or belongs to
    a different configuration.

    Args:
        path: The checkpoint directory.
        reason: What is wrong with it.
    """

    def __init__(self, path: str, reason: str):
        self.path = path
        self.reason = reason
        super().__init__(f"Checkpoint {path}: {reason}")
