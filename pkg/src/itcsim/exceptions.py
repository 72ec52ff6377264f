"""Exception hierarchy shared across the engine."""


class ItcError(Exception):
    """Base class for all engine errors."""


class ConfigError(ItcError, ValueError):
    pass


class DimensionMismatch(ItcError, ValueError):
    pass


class NumericalFailure(ItcError):
    """Base class for failures that callers may want to count rather than abort on."""


class NonConvergence(NumericalFailure):
    pass


class SingularDesign(NumericalFailure):
    pass


class NoOverlap(NumericalFailure):
    pass


class DegenerateArm(NumericalFailure):
    pass


class BracketFailure(NumericalFailure):
    pass


class FamilyMismatch(ItcError, ValueError):
    pass
