"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Tensor shapes are incompatible for the requested operation."""


class ContractError(ValueError):
    """A precondition of an operation was violated."""


class ConfigError(ValueError):
    """Invalid configuration value or key."""
