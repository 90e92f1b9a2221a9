"""Exception hierarchy.  Every error carries a stable machine-readable ``code``."""


class LogGasError(Exception):
    code = "loggas-error"


class RegularityError(LogGasError):
    code = "regularity"


class CatalogError(LogGasError, KeyError):
    code = "catalog"

    def __str__(self):
        return Exception.__str__(self)


class ConvergenceError(LogGasError):
    code = "convergence"


class WindowTooSmallError(LogGasError):
    code = "window-too-small"


class ProximityError(LogGasError):
    code = "proximity"


class DomainError(LogGasError, ValueError):
    code = "domain"


class AdmissibilityError(LogGasError):
    code = "admissibility"

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class IdentityViolationError(LogGasError):
    code = "identity-violation"


class StepSizeError(LogGasError, ValueError):
    code = "step-size"


class DivergenceError(LogGasError):
    code = "divergence"


class FormatError(LogGasError, ValueError):
    code = "format"


class ConfigError(LogGasError, ValueError):
    code = "config"


class CertificationError(LogGasError):
    code = "certification"
