"""Exception hierarchy shared by all projev modules."""


class ProjEvError(Exception):
    """Base class for every error raised by projev."""


class DimensionMismatchError(ProjEvError, ValueError):
    pass


class DependentVectorsError(ProjEvError, ValueError):
    pass


class NotHermitianError(ProjEvError, ValueError):
    pass


class NonCommutingError(ProjEvError, ValueError):
    pass


class IncompleteFamilyError(ProjEvError, ValueError):
    """A family fails its completeness (resolution of unity) invariant."""


class OvercompleteError(ProjEvError, ValueError):
    """Entries already exceed the identity, so no complement exists."""


class InvalidStateError(ProjEvError, ValueError):
    pass


class ProbabilityError(ProjEvError, ValueError):
    """A computed probability lies outside [0, 1] beyond tolerance."""


class BranchImpossibleError(ProjEvError):
    """The selected outcome has probability at or below the zero-branch threshold."""


class UnknownLabelError(ProjEvError, KeyError):
    pass


class ResourceLimitError(ProjEvError):
    """Enumeration would exceed the configured maximum path count."""


class ConfigError(ProjEvError, ValueError):
    """Invalid experiment configuration; the message names the offending field."""


class NonOrthonormalBasisError(ProjEvError, ValueError):
    """The supplied time functions are not orthonormal."""
