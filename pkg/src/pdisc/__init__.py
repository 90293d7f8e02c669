"""Binary perceptron solver: LP vertex, iterated edge-walk partial coloring and randomized rounding,
plus the supporting analytics (LP order parameters, capacity bounds, overlap-gap exponents)."""

__version__ = "0.1.0"

from .core import Instance, SolutionReport, generate_instance, load_instance, margins, save_instance, verify_solution
from .errors import (DegenerateStateError, HorizonError, InfeasibleError, PdiscError, RegimeError,
                     RetryExhaustedError, ScheduleError, SizeError)

__all__ = [
    "__version__", "Instance", "SolutionReport", "generate_instance", "load_instance", "margins",
    "save_instance", "verify_solution", "DegenerateStateError", "HorizonError", "InfeasibleError",
    "PdiscError", "RegimeError", "RetryExhaustedError", "ScheduleError", "SizeError",
]
