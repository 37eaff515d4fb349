"""Exception hierarchy.

Every error raised by the package derives from :class:`FreeshapeError` so the
CLI can map them onto exit codes without catching unrelated bugs.
"""


class FreeshapeError(Exception):
    """Base class for all package errors."""


class InvalidDimension(FreeshapeError, ValueError):
    pass


class TooCoarse(FreeshapeError, ValueError):
    pass


class BadExponents(FreeshapeError, ValueError):
    pass


class ZeroDenominator(FreeshapeError, ArithmeticError):
    pass


class NoDomain(FreeshapeError, ValueError):
    pass


class NonConvergence(FreeshapeError, RuntimeError):
    pass


class NegativeThreshold(FreeshapeError, ValueError):
    pass


class Infeasible(FreeshapeError, ValueError):
    pass


class ZeroField(FreeshapeError, ValueError):
    pass


class NonPositiveX(FreeshapeError, ValueError):
    pass


class DegenerateBall(FreeshapeError, ValueError):
    pass


class GridMismatch(FreeshapeError, ValueError):
    pass


class OutOfBox(FreeshapeError, ValueError):
    pass


class EmptyWindow(FreeshapeError, ValueError):
    pass


class DegenerateFields(FreeshapeError, ValueError):
    pass


class NoBoundary(FreeshapeError, ValueError):
    pass


class VolumeMismatch(FreeshapeError, ValueError):
    pass


class ConfigInvalid(FreeshapeError, ValueError):
    """Bad run configuration; ``key`` names the offending entry."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


class ChecksumError(FreeshapeError, IOError):
    pass
