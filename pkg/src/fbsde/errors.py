"""Exception hierarchy.  Every error the engine raises derives from FbsdeError."""


class FbsdeError(Exception):
    """Base class."""


class NonFiniteState(FbsdeError):
    """A simulated state or Jacobian became inf/nan."""


class DimensionMismatch(FbsdeError, ValueError):
    pass


class SingularDiffusion(FbsdeError):
    """sigma sigma^T is numerically singular where an inverse is needed."""


class InvalidWindow(FbsdeError, ValueError):
    """Weight window [s, r) is empty or outside the grid."""


class ZeroFirstBlock(FbsdeError):
    """Degenerate-block weight anchored at the start with a vanishing first block."""


class IllConditionedGram(FbsdeError):
    pass


class EndpointSingularity(FbsdeError):
    """Driver integral requested down to the weight anchor where it diverges."""


class RankDeficientB(FbsdeError, ValueError):
    pass


class IllConditionedRegression(FbsdeError):
    pass


class MissingSolution(FbsdeError, ValueError):
    """A non-zero driver needs a fitted backward solution."""


class NoConvergence(FbsdeError):
    pass


class SingularJacobian(FbsdeError):
    pass


class UndefinedCase(FbsdeError, ValueError):
    pass


class ConfigError(FbsdeError, ValueError):
    pass
