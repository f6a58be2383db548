"""Exception hierarchy shared across the package."""


class AffectError(Exception):
    """Base class for all package errors."""


class ShapeError(AffectError, ValueError):
    """Operand shapes are incompatible."""


class DomainError(AffectError, ValueError):
    """A reduction or function was applied outside its domain."""


class ContractError(AffectError, ValueError):
    """A caller violated a documented precondition."""


class ConfigError(AffectError, ValueError):
    pass


class DataError(AffectError, ValueError):
    """Input files are malformed or empty."""


class NumericalError(AffectError, ArithmeticError):
    """A loss or metric became NaN or infinite."""
