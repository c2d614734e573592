"""Exception hierarchy shared by all droopstab modules."""


class DroopstabError(Exception):
    """Base class for every error raised by this package."""


class InvalidConfig(DroopstabError):
    pass


class NonUniformRho(InvalidConfig):
    pass


class Disconnected(InvalidConfig):
    pass


class NoSuchLine(InvalidConfig):
    pass


class DroopTooSmall(DroopstabError):
    pass


class DimensionMismatch(DroopstabError):
    pass


class SingularLeadingBlock(DroopstabError):
    pass


class NoConvergence(DroopstabError):
    pass


class ShapeMismatch(DroopstabError):
    pass


class BatchTooSmall(DroopstabError):
    pass


class StaleCache(DroopstabError):
    pass


class NonPhysical(DroopstabError):
    pass


class DegenerateBlock(DroopstabError):
    pass


class AcceptanceTooLow(DroopstabError):
    pass


class NonFiniteLoss(DroopstabError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class EmptyBatch(DroopstabError):
    pass


class UnknownCondition(DroopstabError):
    pass


class BudgetExhausted(DroopstabError):
    pass


class FormatError(DroopstabError):
    """Raised when a binary or JSON file does not match the expected layout."""
