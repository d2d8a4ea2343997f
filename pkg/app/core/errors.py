"""
Exception hierarchy for the EDCA analysis toolkit
"""

from typing import Optional


class EDCAModelError(Exception):
    """Base class for every error raised by the toolkit"""


class DomainError(EDCAModelError, ValueError):
    """An argument lies outside the domain of the operation"""


class SingularityError(EDCAModelError):
    """A denominator of a model equation vanished"""

    def __init__(self, term: str, message: Optional[str] = None):
        self.term = term
        super().__init__(message or f"Singular term in model equation: {term}")


class ConvergenceError(EDCAModelError):
    """An iterative solver exhausted its iteration budget"""

    def __init__(self, message: str, residual: float, iterations: int):
        self.residual = residual
        self.iterations = iterations
        super().__init__(f"{message} (residual={residual:.3e}, iterations={iterations})")


class DivergenceError(EDCAModelError):
    """An iterate left its admissible range"""

    def __init__(self, message: str, quantity: Optional[str] = None,
                 value: Optional[float] = None, timestamp: Optional[float] = None):
        self.quantity = quantity
        self.value = value
        self.timestamp = timestamp
        super().__init__(message)


class NumericError(EDCAModelError):
    """A computed quantity is numerically inadmissible"""


class ConfigError(EDCAModelError):
    """The configuration document could not be parsed or validated"""

    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        self.key = key
        self.line = line
        context = []
        if line is not None:
            context.append(f"line {line}")
        if key:
            context.append(f"key '{key}'")
        suffix = f" ({', '.join(context)})" if context else ""
        super().__init__(f"{message}{suffix}")


class SimulationError(EDCAModelError):
    """The discrete-event simulation could not complete"""
