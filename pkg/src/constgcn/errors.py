"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operands have incompatible or out-of-range shapes/axes."""


class DomainError(ValueError):
    """Input is outside the mathematical domain of an operation."""


class ConfigError(ValueError):
    """A configuration value is invalid or inconsistent."""


class ContractError(RuntimeError):
    """A caller violated an API contract (e.g. non-scalar loss)."""


class ParseError(ValueError):
    """An on-disk artifact is malformed."""


class InvariantError(RuntimeError):
    """Internal bookkeeping invariant broken; indicates a bug."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, message: str, batch_id: int | None = None):
        super().__init__(message)
        self.batch_id = batch_id
