class StepRangeError(IndexError):
    """
    Raised when a training step lies outside a scheduler's range.

    Args:
        step: The requested step.
        total_steps: The scheduler's final step.
    """

    def __init__(self, step: int, total_steps: int):
        self.step = step
        self.total_steps = total_steps
        super().__init__(
            f"Step {step} is outside the scheduled range [1, {total_steps}]"
        )
