class AfcError(Exception):
    """Base class for errors raised by this package."""


class ParameterError(AfcError, ValueError):
    """A physical or numerical parameter is outside its admissible range."""


class InvalidStateError(AfcError, ValueError):
    """A matrix fails the density-matrix invariants."""


class DatasetError(AfcError, ValueError):
    """A measurement dataset is malformed or incomplete."""


class ParseError(DatasetError):
    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        self.line = line
        self.source = source
        where = ""
        if source is not None:
            where += f"{source}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


class ConfigError(AfcError, ValueError):
    """Run configuration is invalid."""
