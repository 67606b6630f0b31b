"""Exception classes raised across the package."""


class DimensionError(ValueError):
    """Array shapes are incompatible with the requested operation."""


class DegenerateInputError(ValueError):
    """Input carries no usable information (flat image, zero field, ...)."""


class NumericalFailure(RuntimeError):
    """A NaN or Inf appeared during an iterative computation."""


class DatasetLoadError(OSError):
    """A dataset directory or one of its files could not be read."""
