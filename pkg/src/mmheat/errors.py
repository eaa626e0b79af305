"""Exception hierarchy for mmheat."""


class MMHeatError(Exception):
    """Base class for all library errors."""

    #: exit code used by the command line front end
    exit_code = 2


class ConfigError(MMHeatError):
    pass


class FeatureTooFine(MMHeatError):
    pass


class DisconnectedDomain(MMHeatError):
    pass


class UnsupportedShape(MMHeatError):
    pass


class LinearSolveFailure(MMHeatError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class CollarTooThin(MMHeatError):
    pass


class GridMisaligned(MMHeatError):
    pass


class EmptyCompactSet(MMHeatError):
    pass


class RadiiTooFine(MMHeatError):
    pass


class CutoffUnsupported(MMHeatError):
    pass


class OnCutLocus(MMHeatError):
    pass


class MigcViolated(MMHeatError):
    pass


class QuadratureFailure(MMHeatError):
    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class WindowTooNarrow(MMHeatError):
    pass


class ResidualBelowNoise(MMHeatError):
    pass
