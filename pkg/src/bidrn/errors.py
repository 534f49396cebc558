"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Raised when tensor shapes or extents are incompatible."""


class ConfigError(ValueError):
    """Raised for malformed or inconsistent network configurations."""


class ContractError(ValueError):
    """Raised when an operation is called outside its contract (e.g. non-scalar loss)."""


class TrainingError(RuntimeError):
    """Raised when training diverges to a non-finite loss."""

    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step
