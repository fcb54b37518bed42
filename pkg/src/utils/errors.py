"""Exception hierarchy shared by every service and the command line."""

from typing import Optional, Sequence


class AlignmentError(Exception):
    """Base class for all errors raised by the alignment toolkit."""

    exit_code = 1


class ConfigError(AlignmentError):
    """Invalid configuration value or generator knob."""

    exit_code = 1


class DataError(AlignmentError):
    """Missing file, malformed line or dangling reference in a dataset."""

    exit_code = 2

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        location = ""
        if path is not None:
            location = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(f"{location}{message}")


class ChecksumError(DataError):
    """Parameter dump does not match its manifest."""


class NumericalError(AlignmentError):
    """A kernel produced NaN/Inf or received an out-of-domain input."""

    exit_code = 3


class ShapeError(NumericalError):
    """Operand shapes do not conform for a kernel."""

    def __init__(self, op: str, *shapes: Sequence[int]):
        self.op = op
        self.shapes = [tuple(s) for s in shapes]
        rendered = " and ".join(str(s) for s in self.shapes)
        super().__init__(f"{op}: incompatible shapes {rendered}")


class TrainingAborted(NumericalError):
    """Training stopped on a non-finite loss; a diagnostic snapshot was written."""

    def __init__(self, message: str, snapshot_dir: Optional[str] = None):
        self.snapshot_dir = snapshot_dir
        suffix = f" (snapshot: {snapshot_dir})" if snapshot_dir else ""
        super().__init__(f"{message}{suffix}")
