"""
Exception types shared by every module.

Exit codes used by main.py:
    1 - UsageError (bad flags, missing files, bad config)
    2 - DataError (input that cannot be processed as a whole)
    3 - AcceptanceError (validate scorecard below thresholds)
"""


class V6Error(RuntimeError):
    exit_code = 2


class UsageError(V6Error):
    exit_code = 1


class ConfigError(UsageError):
    pass


class DataError(V6Error):
    exit_code = 2


class IngestError(DataError):
    pass


class ScheduleError(DataError):
    pass


class AcceptanceError(V6Error):
    exit_code = 3


class PrefixError(ValueError):
    """Address or prefix arithmetic that has no answer (e.g. splitting a /128)."""


class NotEnoughBits(ValueError):
    """A randomness test was given fewer bits than it needs."""
