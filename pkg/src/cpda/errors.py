"""Exception types shared across the toolkit."""


class CpdaError(Exception):
    """Base class for all toolkit errors."""


class OutOfRange(CpdaError, ValueError):
    """A probability entry is outside [0, 1] or non-finite."""

    def __init__(self, index, value):
        self.index = index
        self.value = value
        super().__init__(f"probability out of range at index {index}: {value!r}")


class MalformedMap(CpdaError, ValueError):
    """A saliency-map file failed to parse or its payload length is wrong."""


class InvalidGeometry(CpdaError, ValueError):
    """Patch/grid parameters are inconsistent (k > n, s < 1, empty context)."""


class DimensionMismatch(CpdaError, ValueError):
    """An image does not match the size a classifier or map expects."""


class RegionOutOfBounds(CpdaError, ValueError):
    """A rectangular region extends outside the image."""


class EmptyGroups(CpdaError, ValueError):
    """A group-based classifier was built with no feature groups."""


class BackendUnavailable(CpdaError, RuntimeError):
    """The external classifier process or connection cannot be reached."""


class ProtocolError(CpdaError, RuntimeError):
    """The external classifier replied with an error or spoke garbage."""

    def __init__(self, message, request_id=None):
        self.request_id = request_id
        super().__init__(message)


class InsufficientBank(CpdaError, ValueError):
    """The patch bank holds fewer patches than the requested sample count."""


class EnumerationBudgetExceeded(CpdaError, ValueError):
    """Exact marginalization would need more evaluations than allowed."""


class UnsupportedFormat(CpdaError, ValueError):
    """An image file is not an 8-bit RGB or grayscale PNG."""
