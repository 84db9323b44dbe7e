from typing import Any, Optional


class QCSError(Exception):
    """Base class for every error raised by the simulator."""


class ConfigError(QCSError, ValueError):
    """Bad, unknown or out-of-range configuration."""


class PreconditionError(QCSError, ValueError):
    """
    Structured refusal to run.

    Args:
        bound (str): The violated bound, e.g. "F<=0.5" or "|phi|>=pi/2"
        value: The offending value
        message (str, optional): Human-readable detail
    """

    def __init__(self, bound: str, value: Any, message: Optional[str] = None):
        self.bound = bound
        self.value = value
        super().__init__(message or f"Precondition violated: {bound} (value={value})")

    def to_dict(self):
        return {"bound": self.bound, "value": self.value, "message": str(self)}


class InvariantError(QCSError):
    """An internal invariant failed (trace, Hermiticity, residuals, ...)."""


class NumericalDegeneracyError(InvariantError):
    """A measurement branch with vanishing probability was sampled."""


class ExhaustionError(QCSError):
    """Monte Carlo purification ran out of pairs."""


class ProtocolOrderError(QCSError):
    """An event reached a party in a phase that cannot accept it."""
