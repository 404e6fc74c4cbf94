"""Exception hierarchy shared by all faultforge modules."""


class FaultForgeError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(FaultForgeError):
    """Configuration, scenario or shape problem detected before execution."""


class FileFormatError(FaultForgeError):
    """A binary or text artifact could not be parsed.

    ``offset`` carries the byte position at which parsing failed, when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class FaultLocationError(FaultForgeError):
    """A fault record addressed a coordinate outside its target layer."""


class FaultsExhausted(FaultForgeError):
    """The fault matrix has no further fault group to hand out.

    Deliberately not a ``StopIteration`` subclass: an under-provisioned
    matrix should abort a campaign loudly instead of silently ending a
    ``for`` loop early.
    """


class ReplayMismatchError(FaultForgeError):
    """A replayed campaign diverged from its recorded runset."""
