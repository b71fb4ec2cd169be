"""Exception hierarchy.

Every error carries an ``exit_code`` class so the command line can map
failures onto distinct process exit statuses.
"""

EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4
EXIT_DATA = 5


class BioLSTMError(Exception):
    exit_code = EXIT_DATA


class ConfigInvalid(BioLSTMError):
    exit_code = EXIT_CONFIG


class DimensionMismatch(BioLSTMError, ValueError):
    exit_code = EXIT_DATA


class MeshUnavailable(BioLSTMError):
    pass


class MeshMismatch(DimensionMismatch):
    pass


class DegenerateSegment(BioLSTMError, ArithmeticError):
    exit_code = EXIT_NUMERIC


class NonRotationInput(BioLSTMError, ValueError):
    exit_code = EXIT_NUMERIC


class StaleCache(BioLSTMError):
    pass


class NonFiniteLoss(BioLSTMError, FloatingPointError):
    exit_code = EXIT_NUMERIC


class EmptySplit(BioLSTMError):
    pass


class SchemaError(BioLSTMError, ValueError):
    pass


class EmptyDataset(BioLSTMError):
    pass


class TooFewSequences(BioLSTMError):
    pass


class HistoryTooShort(BioLSTMError):
    pass


class ChkptMismatch(BioLSTMError):
    pass


class MissingStats(BioLSTMError):
    pass


class DataIOError(BioLSTMError, OSError):
    exit_code = EXIT_IO
