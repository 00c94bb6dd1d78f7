"""Typed errors raised across the pipeline."""


class PowercastError(Exception):
    """Base class for every error raised by powercast."""


class RangeError(PowercastError, ValueError):
    pass


class ParseError(PowercastError, ValueError):
    def __init__(self, message, path=None, row=None):
        self.path = path
        self.row = row
        where = ""
        if path is not None:
            where = f"{path}"
            if row is not None:
                where += f":{row}"
            where += ": "
        super().__init__(where + message)


class ConfigurationError(PowercastError, ValueError):
    pass


class ConsistencyError(PowercastError, ValueError):
    pass


class PreconditionError(PowercastError, ValueError):
    pass


class DegenerateFitError(PowercastError, ValueError):
    pass


class UndefinedMetricError(PowercastError, ValueError):
    pass


class UsageError(PowercastError):
    pass
