"""Classical and quantum reflecting projective-simulation agents."""

from .errors import ReflectronError
from .ledger import CostLedger, DeliberationOutcome
from .markov import StochasticMatrix, spectral_info, stationary_distribution
from .tolerances import DEFAULT, Tolerances

__version__ = "0.1.0"

__all__ = [
    "CostLedger",
    "DEFAULT",
    "DeliberationOutcome",
    "ReflectronError",
    "StochasticMatrix",
    "Tolerances",
    "spectral_info",
    "stationary_distribution",
]
