"""Exception hierarchy.  The CLI maps these onto exit codes."""


class DaForgeError(Exception):
    """Base class for every error raised by the package."""


class UnsupportedMatrixError(DaForgeError):
    pass


class NotHyperbolicError(DaForgeError):
    pass


class DegenerateMatrixError(DaForgeError):
    pass


class OutOfChartError(DaForgeError):
    pass


class ParameterError(DaForgeError):
    """Parameters violate one of the construction's inequalities."""


class UnsupportedVariantError(DaForgeError):
    pass


class NumericalError(DaForgeError):
    """An iterative solver or estimator failed to converge."""


class BudgetError(NumericalError):
    """A vertex or iteration budget was exhausted."""


class ConfigError(DaForgeError):
    pass
