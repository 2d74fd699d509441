"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


class ConfigError(ValueError):
    """An attention or model configuration violates its invariants."""


class FullyMaskedRowError(ValueError):
    """A softmax row has no attendable entries; the caller must skip it."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""
