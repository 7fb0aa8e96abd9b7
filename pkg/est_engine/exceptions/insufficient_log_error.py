class InsufficientLogError(ValueError):
    """
    Raised when a loss log does not cover the steps an analysis needs,
    or never reaches a requested loss level.
    """
