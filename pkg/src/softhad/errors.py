"""Exception hierarchy.

Every error raised on purpose by the library derives from :class:`SoftHADError`
and carries the name of the stage that raised it, so the command-line front end
can report where a pipeline failed.
"""


class SoftHADError(ValueError):
    stage = "softhad"


class DataError(SoftHADError):
    stage = "data"


class GraphError(SoftHADError):
    stage = "graph"


class BackboneError(SoftHADError):
    stage = "backbone"


class HarmonicError(SoftHADError):
    stage = "harmonic"


class ConvergenceError(HarmonicError):
    """The iterative solver stopped before reaching the residual target."""

    def __init__(self, message, residual, iterations):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class BaselineError(SoftHADError):
    stage = "baseline"


class EvalError(SoftHADError):
    stage = "eval"
