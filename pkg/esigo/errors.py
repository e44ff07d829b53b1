"""
Exception hierarchy for the ES-IGO toolkit.

Integrators and discrete runs report trajectory failures through the
trajectory status instead of raising; everything here is for invalid
inputs, missing capabilities and exhausted numerical budgets.
"""

from typing import Optional


class EsigoError(Exception):
    """Base class for every error raised by the package"""


class DomainError(EsigoError, ValueError):
    """An input lies outside the domain of the operation"""


class ConfigurationError(EsigoError, ValueError):
    """Invalid settings, descriptors or experiment files"""

    def __init__(self, message: str, line: Optional[int] = None, source: Optional[str] = None):
        super().__init__(message)
        self.message = message
        self.line = line
        self.source = source

    def __str__(self) -> str:
        if self.line is None:
            return self.message
        prefix = f"{self.source}:" if self.source else "line "
        return f"{prefix}{self.line}: {self.message}"


class CapabilityError(EsigoError, NotImplementedError):
    """The objective does not provide the requested capability"""


class NumericalError(EsigoError, ArithmeticError):
    """A quadrature or series evaluation ran out of budget"""


class StepRejected(DomainError):
    """A discrete step produced a non-positive variance"""

    def __init__(self, message: str, proposed_v: float):
        super().__init__(message)
        self.proposed_v = proposed_v
