"""Exception types shared across the package."""


class ConfAdaptError(Exception):
    pass


class ImageIOError(ConfAdaptError, OSError):
    """Missing, unreadable or truncated file."""


class FormatError(ConfAdaptError, ValueError):
    """File content does not match the declared or supported encoding."""


class RangeError(ConfAdaptError, ValueError):
    """A value cannot be represented in the target encoding."""


class ShapeMismatch(ConfAdaptError, ValueError):
    pass


class ArgumentError(ConfAdaptError, ValueError):
    pass


class NonFiniteValue(ConfAdaptError, FloatingPointError):
    pass


class NotScalar(ConfAdaptError, ValueError):
    pass


class EmptyDataset(ConfAdaptError, ValueError):
    pass


class NoValidPixels(ConfAdaptError, ValueError):
    pass


class NonPositiveGroundTruth(ConfAdaptError, ValueError):
    pass


def check_same_shape(*arrays, names=None):
    shapes = [getattr(a, "shape", None) for a in arrays]
    if any(s != shapes[0] for s in shapes[1:]):
        label = ", ".join(names) if names else "operands"
        raise ShapeMismatch(f"shape mismatch between {label}: {shapes}")
