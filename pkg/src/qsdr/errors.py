"""Exception and warning types raised by qsdr."""


class QsdrError(Exception):
    """Base class for all qsdr errors."""


class ConfigError(QsdrError, ValueError):
    """Invalid configuration or argument combination."""


class InsufficientLocalData(QsdrError):
    """A kernel window holds fewer positively weighted samples than parameters."""


class InsufficientData(QsdrError):
    """The whole sample is too small for the requested estimator."""


class OrderTooLow(QsdrError):
    """Gradient requested from a local constant (k = 0) fit."""


class NoValidGradients(QsdrError):
    """Every local fit at one quantile level failed."""


class AllWeightsZero(QsdrError):
    """Every level of a composite OPG received weight zero."""


class NotSymmetric(QsdrError, ValueError):
    pass


class RankDeficient(QsdrError, ValueError):
    pass


class EmptyGrid(QsdrError, ValueError):
    pass


class DegenerateCovariance(QsdrError):
    pass


class TooFewSlices(QsdrError, ValueError):
    pass


class DataError(QsdrError):
    """Problems reading or validating an input dataset."""


class MissingColumn(DataError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class NoNumericData(DataError):
    pass


class EmptyAfterFiltering(DataError):
    pass


class SolverDiverged(QsdrError, RuntimeWarning):
    """Iteration cap reached before tolerance.

    Emitted through :mod:`warnings`; the (unconverged) result is still returned.
    """
