"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration (bad keys, impossible windows, ...)."""


class DomainError(ValueError):
    """Inputs outside the validity region of a closed-form bound."""


class NumericError(ArithmeticError):
    """Non-finite values where finite ones are required (NaN/Inf gradients etc.)."""


class CsvParseError(ValueError):
    """Malformed CSV cell; carries row/column context in the message."""
