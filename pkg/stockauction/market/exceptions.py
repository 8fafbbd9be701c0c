class MarketError(Exception):
    """Base class for every error raised by the market library."""


class MarketSpecError(MarketError, ValueError):
    """A market or experiment definition is invalid."""


class DensityZeroError(MarketError):
    """The conditional value density vanishes where a virtual value is needed."""


class NonMonotoneError(MarketError):
    """The virtual value is not monotone, so it cannot be inverted."""


class DomainError(MarketError, ValueError):
    """An argument lies outside the domain of a function."""


class SingularRegressionError(MarketError):
    """The basis regression design matrix is rank-deficient."""


class SizeCapError(MarketError):
    """A desk-scale oracle was asked to solve an instance above its size cap."""


class TrainingDivergedError(MarketError):
    """The critic loss blew up during DDPG training."""


class PolicyFileError(MarketError):
    """A serialized policy file is malformed or has an unknown version."""
