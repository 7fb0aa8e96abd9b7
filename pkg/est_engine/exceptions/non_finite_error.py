class NonFiniteError(ArithmeticError):
    """
    Raised when a NaN or infinite value shows up where training cannot
    continue: an input to a numerically sensitive operation, the loss or
    a gradient.

    Args:
        what: Short description of the offending quantity.
        step: Training step at which it was detected, if any.
        names: Names of the offending parameters, if any.
    """

    def __init__(
        self,
        what: str,
        step: int | None = None,
        names: list[str] | None = None,
    ):
        self.what = what
        self.step = step
        self.names = names or []

        message = f"Non-finite {what}"
        if step is not None:
            message += f" at step {step}"
        if self.names:
            message += f" (parameters: {', '.join(self.names)})"
        super().__init__(message)
