"""Exception hierarchy shared by all modules."""


class BilliardError(Exception):
    """Base class for every error raised by this package."""


# table construction
class OverlapError(BilliardError):
    pass


class InfiniteHorizonError(BilliardError):
    pass


class FamilyBoundError(BilliardError):
    pass


# orbit computation
class TangencyError(BilliardError):
    pass


class NoCollisionError(BilliardError):
    pass


class FlightTimeError(BilliardError):
    """A computed flight time left the certified interval."""


class GridTooCoarse(BilliardError):
    pass


class ArityMismatch(BilliardError):
    pass


# curves and cones
class ResolutionError(BilliardError):
    pass


class NotInCone(BilliardError):
    pass


class DomainError(BilliardError):
    pass


class EmptySampler(BilliardError):
    pass


class NotComparable(BilliardError):
    pass


# transfer operator
class ToleranceError(BilliardError):
    pass


class CertificateViolation(BilliardError):
    pass


class AdmissibilityError(BilliardError):
    """A map sequence does not satisfy the block closeness requirement."""


# open systems and applications
class GeometryError(BilliardError):
    pass


class Starvation(BilliardError):
    pass


class SymmetryError(BilliardError):
    pass


class HorizonError(BilliardError):
    pass


class ConfigError(BilliardError):
    pass
