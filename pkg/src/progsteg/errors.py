"""Exception types shared across the package.

Contract violations (bad shapes, bad sizes, bad arguments) derive from
``ValueError`` so callers that do not care about the fine-grained class can
still catch them generically.  Runtime failures derive from ``RuntimeError``.
"""


class LengthMismatch(ValueError):
    """Bit count does not match the requested tensor geometry."""


class ShapeMismatch(ValueError):
    """Array shapes are incompatible with the operation's contract."""


class OddDimension(ValueError):
    """Spatial dimension must be even to halve it."""


class DimensionNotDivisible(ValueError):
    """Spatial dimensions must be divisible by the network's total stride."""


class ShapeTooSmall(ValueError):
    """Input is below the minimum spatial size the network accepts."""


class WindowTooLarge(ValueError):
    """Image is smaller than the local-statistics window."""


class ImageTooSmall(ValueError):
    """Image is too small for the requested number of scales."""


class DecodeError(ValueError):
    """File exists but does not decode as an image."""


class CapacityExceeded(ValueError):
    """Payload does not fit in the available bit planes."""


class UnknownVariant(ValueError):
    """Requested model variant is not registered."""


class EmptyDataset(ValueError):
    """Dataset manifest contains no usable entries."""


class CardinalityMismatch(ValueError):
    """Paired datasets must have the same number of items."""


class NonFinite(ValueError):
    """A value that must be finite is NaN or infinite."""


class ConfigMismatch(ValueError):
    """Requested configuration conflicts with a stored one (e.g. on resume)."""


class NonFiniteLoss(RuntimeError):
    """Training produced a non-finite loss; message names the component."""
