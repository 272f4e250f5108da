"""Continuous piano sustain-pedal depth estimation at 100 frames/second."""

from .errors import DataError, MidiParseError, NumericError, PedalDepthError

__version__ = "0.1.0"

__all__ = [
    "DataError",
    "MidiParseError",
    "NumericError",
    "PedalDepthError",
    "__version__",
]
