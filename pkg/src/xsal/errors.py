"""Exception types shared across the library."""


class XsalError(Exception):
    """Base class for all library errors."""


class InvalidDimensionError(XsalError):
    """Shapes of the involved tensors/images do not line up."""


class InvalidParameterError(XsalError):
    """A parameter is outside its valid domain."""


class NoDetectionsError(XsalError):
    """A detector returned no detections where at least one was required."""


class NoMatchError(XsalError):
    """The queried detection could not be re-identified on the given image."""


class CapabilityMissingError(XsalError):
    """The adapter does not offer the capability the operation needs."""


class AdapterError(XsalError):
    """A detector adapter failed while serving a request."""


class ConnectionLostError(AdapterError):
    """The transport to a remote detector closed unexpectedly."""


class ProtocolError(XsalError):
    """A remote peer sent a malformed or invalid message."""


class IncompatiblePeerError(ProtocolError):
    """The remote peer speaks an unsupported protocol version."""


class ImageFormatError(XsalError):
    """An input image file has an unsupported format or mode."""
