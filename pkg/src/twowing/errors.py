"""Exception types shared across the package."""


class TwoWingError(Exception):
    """Base class for all package errors."""


class DimensionError(TwoWingError, ValueError):
    """Operand shapes do not agree."""


class ArgumentError(TwoWingError, ValueError):
    """An argument is outside the domain of an operation (e.g. empty input)."""


class ContractError(TwoWingError, RuntimeError):
    """An API contract was violated by the caller."""


class ParseError(TwoWingError, ValueError):
    """A file could not be parsed. Carries the path and line number when known."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class ValidationError(ParseError):
    """A record parsed but holds a value outside its closed domain."""


class BuildError(TwoWingError, ValueError):
    """An index or model could not be built from the given inputs."""


class VersionError(TwoWingError, ValueError):
    """A checkpoint or snapshot has an unsupported format version or config."""
