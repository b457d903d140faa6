"""Exception types shared across the package."""


class LatticeError(Exception):
    """Base class for every error raised by this package."""


class RankDeficient(LatticeError):
    pass


class NonInteger(LatticeError):
    pass


class ZeroDiagonal(LatticeError):
    pass


class DegenerateRotation(LatticeError):
    pass


class ShapeMismatch(LatticeError):
    pass


class DomainError(LatticeError):
    pass


class NotReduced(LatticeError):
    pass


class SearchSpaceTooLarge(LatticeError):
    pass


class ProtocolViolation(LatticeError):
    """A cell saw control signals it cannot reconcile within one cycle."""


class ConfigError(LatticeError):
    pass


class IterationLimit(LatticeError):
    """Reduction stopped at its iteration cap.

    The partially reduced outcome is kept on ``outcome`` (its
    ``converged`` flag is False) so callers can still inspect it.
    """

    def __init__(self, message, outcome=None):
        super().__init__(message)
        self.outcome = outcome
