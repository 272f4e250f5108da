"""Exception taxonomy shared by all modules.

The CLI maps these onto exit codes: usage errors exit 2 (click's own),
DataError exits 3, NumericError exits 4.
"""


class PedalDepthError(Exception):
    """Base class for all package errors."""


class DataError(PedalDepthError):
    """Malformed, missing, or inconsistent input data."""


class MidiParseError(DataError):
    """Standard MIDI File could not be parsed.

    Carries the byte offset at which parsing failed.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class NumericError(PedalDepthError):
    """A numeric invariant was violated (non-finite loss, diverged step, ...)."""
