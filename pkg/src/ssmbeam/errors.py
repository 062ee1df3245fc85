"""Exception hierarchy shared by every module."""


class WorkbenchError(Exception):
    """Base class; the CLI maps these to nonzero exit codes."""

    exit_code = 1


class GeometryError(WorkbenchError, ValueError):
    exit_code = 2


class SceneConstraintError(GeometryError):
    pass


class AcousticsError(WorkbenchError, ValueError):
    exit_code = 3


class SignalError(WorkbenchError, ValueError):
    exit_code = 4


class WavFormatError(SignalError):
    pass


class SpectralError(WorkbenchError, ValueError):
    exit_code = 5


class ModelError(WorkbenchError, ValueError):
    exit_code = 6


class TrainingDivergedError(ModelError):
    pass


class MvdrError(WorkbenchError, ValueError):
    exit_code = 7


class MetricError(WorkbenchError, ValueError):
    exit_code = 8


class ConfigError(WorkbenchError, ValueError):
    exit_code = 9
