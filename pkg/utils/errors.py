"""Error hierarchy shared by services and the command line"""


class QselError(Exception):
    """Base error; exit_code is what the command line returns"""
    exit_code = 1


class ConfigError(QselError):
    exit_code = 2


class UnsupportedModel(ConfigError):
    """Covariance parametrization outside the implemented six"""


class DataError(QselError):
    exit_code = 3


class ParseError(DataError):
    pass


class EmptyData(DataError):
    pass


class LengthMismatch(DataError):
    pass


class ComputeError(QselError):
    exit_code = 4


class InvalidConfiguration(ComputeError):
    pass


class SingularSigma(ComputeError):
    pass


class DegenerateFit(ComputeError):
    pass


class NotEnoughPoints(ComputeError):
    pass


class EmptyCluster(ComputeError):
    pass


class NotApplicable(ComputeError):
    """Criterion undefined for this method (e.g. AIC for k-medoids)"""


class DegenerateScatter(ComputeError):
    pass


class TooManyFailures(ComputeError):
    def __init__(self, message, failures=0, attempts=0):
        super().__init__(message)
        self.failures = failures
        self.attempts = attempts


class FoldTooSmall(ComputeError):
    pass


class NoApplicableMethod(ComputeError):
    pass
