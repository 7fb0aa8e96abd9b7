class ShapeError(ValueError):
    """
    Raised when tensor shapes cannot be composed.

    Args:
        operation: Name of the operation that rejected its inputs.
        shapes: The offending input shapes, in argument order.
    """

    def __init__(self, operation: str, *shapes: tuple[int, ...]):
        self.operation = operation
        self.shapes = shapes
        listed = " and ".join(str(tuple(shape)) for shape in shapes)
        super().__init__(f"{operation}: incompatible shapes {listed}")
