class ConfigError(ValueError):
    """Invalid configuration or shape mismatch."""


class NumericError(ArithmeticError):
    """A non-finite value appeared during a computation."""


class SamplingError(RuntimeError):
    """Replay buffer cannot produce the requested traces."""


class ContractError(RuntimeError):
    """An operation was called in a state that forbids it."""
