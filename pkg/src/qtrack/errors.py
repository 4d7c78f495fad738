"""Exceptions shared across modules."""


class DimensionMismatch(ValueError):
    """Two frames (or a frame and a weight map) disagree in shape."""


class OutOfBounds(ValueError):
    """A block or box exceeds the frame bounds."""
