class StreamTerminatedError(RuntimeError):
    """
    Raised by the consumer side of a mask stream when the producer has
    stopped, either because it failed or because it ran out of steps.
    """
