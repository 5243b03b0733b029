"""Shared exception types.

Validation problems (bad parameters, malformed config, missing data) are
distinguished from numerical failures (non-convergence, unresolvable grids)
because the command line maps them to different exit codes.
"""


class ValidationError(ValueError):
    """Input violates a documented precondition."""


class TailRequiredError(ValidationError):
    """Operation needs a decay-tail model but the sampled function has none."""


class ResolutionError(RuntimeError):
    """Grid too coarse (or value too small) to resolve the requested quantity."""


class ConvergenceError(RuntimeError):
    """Iterative solver or chain failed to converge within its budget."""


class BoxTooSmallError(ValidationError):
    """Computed support touches the computational box edge."""


class SingularityError(ValidationError):
    """Coincident particles make the pair interaction singular."""


class UnsupportedError(ValidationError):
    """Requested case is outside the implemented scope."""


class CacheConsistencyError(RuntimeError):
    """Incrementally maintained state drifted from a full recomputation."""
