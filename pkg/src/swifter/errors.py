"""Error types raised by the public API."""


class ShapeError(ValueError):
    """Operand shapes are incompatible with the operation."""


class DomainError(ValueError):
    """A scalar argument is outside its legal range."""


class ConfigError(ValueError):
    """A configuration object violates one of its invariants."""


class ContractError(RuntimeError):
    """A call broke a usage contract (wrong state, wrong order, wrong kind)."""
