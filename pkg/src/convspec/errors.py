"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible (e.g. matmul inner dims differ)."""


class SizeError(ValueError):
    """Input exceeds a documented size guard, or is too small (n < k)."""


class ConvergenceError(RuntimeError):
    """An iterative solver failed to reach its tolerance.

    Carries the final residual and the number of iterations performed.
    """

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class ConfigError(ValueError):
    """A run/architecture configuration is inconsistent or has unknown keys."""


class InputError(ValueError):
    """A file could not be parsed; ``offset`` is the byte position if known."""

    def __init__(self, message, offset=None):
        super().__init__(message)
        self.offset = offset


class NumericError(RuntimeError):
    """A non-finite value appeared during training.

    ``block`` names the first offending block, ``epoch``/``step`` locate it.
    """

    def __init__(self, message, block=None, epoch=None, step=None):
        super().__init__(message)
        self.block = block
        self.epoch = epoch
        self.step = step


class StateError(RuntimeError):
    """An operation was called out of order (e.g. backward before forward)."""


class ApplicabilityError(ValueError):
    """A theorem-bound evaluator was given a block outside its hypotheses."""
