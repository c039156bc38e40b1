#!/usr/bin/env python3
"""
Errors
Exception hierarchy shared by every dni_lab module
"""

from typing import Optional, Sequence


class DniLabError(Exception):
    """Base class for all dni_lab errors"""


class ShapeError(DniLabError, ValueError):
    """Operand shapes do not agree"""

    def __init__(self, message: str, *shapes: Sequence[int]):
        if shapes:
            message = f"{message} (shapes: {', '.join(str(tuple(s)) for s in shapes)})"
        super().__init__(message)
        self.shapes = [tuple(s) for s in shapes]


class ValidationError(DniLabError, ValueError):
    """Argument values are outside what an operation accepts"""


class NonFiniteError(DniLabError, ArithmeticError):
    """A NaN or Inf showed up in a named quantity"""

    def __init__(self, name: str, detail: str = ""):
        message = f"Non-finite values in {name}"
        if detail:
            message = f"{message}: {detail}"
        super().__init__(message)
        self.name = name


class UndefinedCorrelationError(DniLabError, ValueError):
    """Pearson correlation requested for a constant vector"""


class MissingCacheError(DniLabError, RuntimeError):
    """backward() was called without the cache produced by forward()"""


class MissingContextError(DniLabError, KeyError):
    """A conspiring-gradient variant needs a context item that was not supplied"""

    def __init__(self, variant: str, item: str):
        super().__init__(f"{variant} needs context item '{item}'")
        self.variant = variant
        self.item = item

    def __str__(self) -> str:
        return self.args[0]


class UnsupportedModuleError(DniLabError, TypeError):
    """Operation is not defined for the given SG module kind"""


class IdxFormatError(DniLabError, ValueError):
    """Base class for IDX file problems"""


class IdxMagicError(IdxFormatError):
    """IDX magic number does not match the expected file type"""


class IdxTruncatedError(IdxFormatError):
    """IDX payload is shorter than its header promises"""


class IdxCountMismatchError(IdxFormatError):
    """Image and label files disagree on the number of items"""


class CheckpointError(DniLabError, ValueError):
    """Checkpoint container is malformed or does not fit the network"""


class ConfigError(DniLabError, ValueError):
    """Experiment configuration failed validation"""

    def __init__(self, key_path: str, message: str):
        super().__init__(f"{key_path}: {message}" if key_path else message)
        self.key_path = key_path


class ConvergenceStallError(DniLabError, RuntimeError):
    """Backtracking could not certify a decrease"""

    def __init__(self, message: str, iteration: Optional[int] = None):
        super().__init__(message)
        self.iteration = iteration
