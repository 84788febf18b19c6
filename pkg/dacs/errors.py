"""Exception hierarchy for the dacs package."""


class DacsError(Exception):
    """Base class for every error raised by dacs."""


class ConfigError(DacsError):
    """Invalid run or environment configuration."""


class DataError(DacsError):
    """Input data cannot be used as given."""


class DuplicateFiniteScore(DataError):
    """Two finite conformity scores collide and jitter was not requested."""


class EmptyTestSet(DataError):
    """No test samples were provided."""


class AllZeroFingerprint(DataError):
    """A fingerprint has no bits set, so its Tanimoto coefficient is undefined."""


class DegenerateBandwidth(DataError):
    """Automatic RBF bandwidth is zero because all points coincide."""


class NotPositiveDefinite(DataError):
    """A similarity matrix failed the positive definiteness check."""


class UnknownSetting(DataError):
    """Requested simulation setting does not exist."""


class UnsupportedRelaxation(DacsError):
    """The diversity metric has no relaxed [0, 1] extension."""


class MissingCell(DacsError):
    """A reward value needed by the Snell recursion is absent."""


class NoFlippableOne(DacsError):
    """Coupling step needs a calibration coordinate to flip but none exists."""


class Infeasible(DacsError):
    """A projection or program has an empty feasible set."""


class SolverDiverged(DacsError):
    """Projected gradient descent failed to converge."""


class StoreError(DacsError):
    """The results store could not be reached or written."""
