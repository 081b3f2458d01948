"""Exception types shared across the package.

The CLI maps these onto process exit codes (see ``porefilt.cli``): config
problems exit 2, simulation failures exit 3 and an all-infeasible search
exits 4.
"""


class PorefiltError(Exception):
    """Base class for all package-specific errors."""


class InvalidShapeError(PorefiltError, ValueError):
    """A pore shape function is structurally invalid (e.g. no coefficients)."""


class InvalidParameterError(PorefiltError, ValueError):
    """A physical parameter is outside its admissible range."""


class GridMismatchError(PorefiltError, ValueError):
    """Array arguments do not share the profile's spatial grid."""


class PoreClosedError(PorefiltError, RuntimeError):
    """An operation requiring an open pore met a radius at the closure floor."""


class DegenerateFlowError(PorefiltError, RuntimeError):
    """Transport was requested for a non-positive flux."""


class InfeasibleStartError(PorefiltError, RuntimeError):
    """A constant-flux run starts above the admissible inlet pressure."""


class UndefinedPurityError(PorefiltError, RuntimeError):
    """Purity is undefined because every accumulated concentration is zero."""


class UnsupportedMethodError(PorefiltError, ValueError):
    """The requested optimization method does not exist for the problem."""


class FilterExhaustedError(PorefiltError, RuntimeError):
    """A pass was requested on a filter that is already fully fouled."""


class ConfigError(PorefiltError, ValueError):
    """A run configuration file is malformed or inconsistent."""
