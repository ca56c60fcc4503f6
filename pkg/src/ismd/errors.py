"""Exception hierarchy shared by every module of the package."""


class ISMDError(Exception):
    """Base class for all errors raised by :mod:`ismd`."""

    exit_code = 4
    code = "internal-error"


class ValidationError(ISMDError, ValueError):
    """Malformed input: wrong shape, asymmetric matrix, bad partition."""

    exit_code = 2
    code = "invalid-input"


class AlgorithmError(ISMDError):
    """The input is well formed but the algorithm cannot proceed."""

    exit_code = 3
    code = "algorithm-failure"


class NotPSDError(AlgorithmError):
    """A matrix assumed positive semidefinite has a significant negative part."""

    code = "not-psd"


class SingularityError(AlgorithmError):
    """A local factor is rank deficient."""

    code = "singular-local-factor"

    def __init__(self, message, patch=None):
        super().__init__(message)
        self.patch = patch


class ConvergenceError(AlgorithmError):
    """An iterative routine hit its iteration limit."""

    code = "no-convergence"

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class GapNotFoundError(AlgorithmError):
    """No separation between noise-level and signal-level entries."""

    code = "gap-not-found"

    def __init__(self, message, histogram=None, gap=None):
        super().__init__(message)
        self.histogram = histogram
        self.gap = gap


class InfeasibleTargetError(AlgorithmError):
    """The requested rank or accuracy cannot be reached."""

    code = "infeasible-target"

    def __init__(self, message, best_residual=None):
        super().__init__(message)
        self.best_residual = best_residual
        self.next_local_tol = None


class InvariantError(ISMDError):
    """An internal consistency check failed."""

    exit_code = 4
    code = "invariant-violation"
