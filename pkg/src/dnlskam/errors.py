"""Exception types shared across the package."""


class KamError(Exception):
    """Base class for every refusal raised by the package."""


class DivergentSeries(KamError):
    pass


class SmallDivisor(KamError):
    def __init__(self, message, k=None, block=None, value=None, bound=None):
        super().__init__(message)
        self.k = k
        self.block = block
        self.value = value
        self.bound = bound


class NonzeroAverage(KamError):
    pass


class PicardDivergence(KamError):
    pass


class StripViolation(KamError):
    pass


class NonContraction(KamError):
    pass


class SingularSystem(KamError):
    pass


class GuardViolation(KamError):
    """The anti-diagonal small-coefficient guard does not hold, so the solve is refused."""


class SeriesStagnation(KamError):
    pass


class BudgetExceeded(KamError):
    pass


class RadiusViolation(KamError):
    pass


class DegeneratePair(KamError):
    pass


class ModeOutOfRange(KamError):
    pass


class IllConditionedFit(KamError):
    pass


class NonBoxBase(KamError):
    pass
