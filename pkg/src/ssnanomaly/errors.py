"""Exception hierarchy.

Every error raised on purpose by this package derives from
:class:`SSNAnomalyError`.  The subclasses of :class:`DataError` and
:class:`NumericalError` map to distinct CLI exit codes.
"""


class SSNAnomalyError(Exception):
    """Base class for all package errors."""


class DataError(SSNAnomalyError, ValueError):
    """Input data or configuration is invalid."""


class NumericalError(SSNAnomalyError, ArithmeticError):
    """A numerical routine failed."""


# network
class CycleDetected(DataError):
    pass


class MultipleOutlets(DataError):
    pass


class DanglingDownstreamId(DataError):
    pass


class SiteOffsetOutOfRange(DataError):
    pass


class TooManySites(DataError):
    pass


# covariance / model
class NotPositiveDefinite(NumericalError):
    pass


class InvalidConfig(DataError):
    pass


class DivergentChain(NumericalError):
    pass


# detectors
class RefitFailed(NumericalError):
    pass


class EmNotConverged(NumericalError):
    pass


class DegenerateComponent(NumericalError):
    pass


class BaumWelchNotConverged(NumericalError):
    pass


class SingularEmission(NumericalError):
    pass


class AllModelsFailed(NumericalError):
    pass


# impale
class InsufficientData(DataError):
    pass


class EmptySeries(DataError):
    pass


# evaluate
class MisalignedLabels(DataError):
    pass
