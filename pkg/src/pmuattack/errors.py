"""Exception types raised across the package."""


class PMUAttackError(Exception):
    """Base class for all package errors."""


class ShapeMismatch(PMUAttackError, ValueError):
    pass


class ZeroImpedanceLine(PMUAttackError, ValueError):
    pass


class InvalidTopology(PMUAttackError, ValueError):
    pass


class InvalidSize(PMUAttackError, ValueError):
    pass


class RankTooLarge(PMUAttackError, ValueError):
    pass


class EmptySupport(PMUAttackError, ValueError):
    pass


class DegenerateAttack(PMUAttackError, RuntimeError):
    """Attack columns kept landing inside the column space of the clean data."""


class EmptyMask(PMUAttackError, ValueError):
    pass


class RankDeficiencyAmbiguous(PMUAttackError, ValueError):
    """Singular values fall inside the band where the numerical rank is unclear."""


class BoundInapplicable(PMUAttackError, ValueError):
    pass


class InvalidPsiC(PMUAttackError, ValueError):
    pass


class SeriesDivergent(PMUAttackError, ArithmeticError):
    pass


class SingularGram(PMUAttackError, ArithmeticError):
    pass


class SvdFailure(PMUAttackError, ArithmeticError):
    pass
