"""Exception types shared across the package.

The CLI maps each family onto a process exit code.
"""


class OccFlowError(Exception):
    exit_code = 1


class ConfigError(OccFlowError, ValueError):
    exit_code = 2


class DataError(OccFlowError, ValueError):
    exit_code = 3


class SceneFormatError(DataError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaVersionError(SceneFormatError):
    pass


class ShapeError(OccFlowError, ValueError):
    pass


class MetricDomainError(OccFlowError, ValueError):
    pass


class NumericalError(OccFlowError, RuntimeError):
    exit_code = 4


class CheckpointError(OccFlowError, ValueError):
    exit_code = 3
