class BindingError(Exception):
    """Base class for binding-layer errors."""


class ShapeError(BindingError):
    """An array argument has the wrong shape, dtype or layout."""


class ClosedHandleError(BindingError):
    """The handle was closed; using or re-closing it is an error."""


class CoreError(BindingError):
    """A core library error, re-raised with the core's message."""
