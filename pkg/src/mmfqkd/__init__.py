"""Decoy-state BB84 over multimode OM3 fibre: channel, receiver and key-rate simulator."""
from .domain import Basis, IntensityClass, ProtocolParams, SeededRng, SymbolPattern, binary_entropy
from .errors import (AlignmentError, BoundError, CalibrationError, ConfigError, InsufficientDataError,
                     MMFQKDError, NoSignalError, ParseError)

__all__ = [
    "Basis", "IntensityClass", "ProtocolParams", "SeededRng", "SymbolPattern", "binary_entropy",
    "AlignmentError", "BoundError", "CalibrationError", "ConfigError", "InsufficientDataError",
    "MMFQKDError", "NoSignalError", "ParseError",
]
__version__ = "0.1.0"
