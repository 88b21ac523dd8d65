"""
Tracker Errors
Every failure a module can report, with the process exit code the CLI uses.
"""
from typing import Optional


class TrackerError(Exception):
    """Base class for all tracker errors (internal failures, exit 1)."""
    exit_code = 1


class InputError(TrackerError):
    """Bad input or usage (exit 2)."""
    exit_code = 2


class ConfigError(InputError):
    pass


# Sequence I/O

class SequenceError(InputError):
    def __init__(self, message: str, path: Optional[str] = None):
        self.path = path
        super().__init__(f"{message}: {path}" if path else message)


class MissingDirectoryError(SequenceError):
    def __init__(self, path: str):
        super().__init__("input directory does not exist", path)


class NoFramesError(SequenceError):
    def __init__(self, path: str, found: int = 0):
        self.found = found
        super().__init__(f"no frames (found {found}, need at least 2)", path)


class DimensionMismatchError(SequenceError):
    def __init__(self, path: Optional[str], expected, actual):
        self.expected = expected
        self.actual = actual
        super().__init__(f"dimension mismatch, expected {expected} got {actual}", path)


class UndecodableFrameError(SequenceError):
    def __init__(self, path: str):
        super().__init__("cannot decode image", path)


class GroundTruthParseError(InputError):
    def __init__(self, path: str, line_number: int, reason: str):
        self.path = path
        self.line_number = line_number
        super().__init__(f"{path}: line {line_number}: {reason}")


class EmptyGroundTruthError(InputError):
    pass


class ScenarioError(InputError):
    pass


# Numerical core

class ModelInitError(TrackerError):
    pass


class BlockSizeError(TrackerError):
    pass


class BlockNotInGroupError(TrackerError):
    pass


class DegenerateClassesError(TrackerError):
    pass


class EmptyKernelSupportError(TrackerError):
    pass


class ZeroWeightError(TrackerError):
    pass
