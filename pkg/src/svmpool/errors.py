"""Exception hierarchy.

Errors are grouped so the CLI can map them onto exit codes: ``DataError``
subclasses are input problems, ``NumericalError`` subclasses are solver
outcomes that could not be turned into a result.
"""


class SvmpError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(SvmpError, ValueError):
    pass


class DataError(SvmpError):
    """Malformed or inconsistent input data."""


class FormatError(DataError, ValueError):
    pass


class NonFiniteError(DataError, ValueError):
    pass


class DimensionMismatch(DataError, ValueError):
    pass


class AlreadyCentered(DataError):
    pass


class DegenerateLabels(DataError, ValueError):
    pass


class NegativeInput(DataError, ValueError):
    pass


class BagTooShort(DataError, ValueError):
    pass


class InsufficientData(DataError, ValueError):
    pass


class SizeLimitExceeded(SvmpError, ValueError):
    pass


class NumericalError(SvmpError):
    """A solver could not produce a usable result."""


class EtaUnreachable(NumericalError):
    """The C schedule was exhausted before the bag reached the target fraction."""

    def __init__(self, message, *, bag_id=None, c_last=None, fraction=None):
        super().__init__(message)
        self.bag_id = bag_id
        self.c_last = c_last
        self.fraction = fraction


class AtKink(NumericalError):
    pass


class NotConverged(NumericalError):
    pass
