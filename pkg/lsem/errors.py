"""errors.py

By: Liam Strand
On: Summer 2023

The exceptions raised by lsem, and the exit codes the command line driver maps
them onto. Everything derives from LsemError so a caller can catch the whole
family at once; the numerical failures also derive from ArithmeticError and the
input problems from ValueError.
"""

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2


class LsemError(Exception):
    """Base class for every error raised by lsem."""


class ModelError(LsemError, ValueError):
    """A model violates its invariants (shapes, symmetry, PSD, step size)."""


class TraceError(LsemError, ValueError):
    """Sampled data is inconsistent (lengths, off-grid event times)."""


class NumericalError(LsemError, ArithmeticError):
    """A numerical routine could not produce a meaningful result."""


class FactorizationError(NumericalError):
    """A covariance could not be factored (it is not PSD)."""


class WeightCollapseError(NumericalError):
    """Every particle has negligible likelihood: model and data disagree."""


class SingularTransitionError(NumericalError):
    """The transition covariance is singular, so its density is undefined."""


class InsufficientExcitationError(NumericalError):
    """The M-step Gram matrix is singular or too badly conditioned to invert."""


class IdentificationError(NumericalError):
    """An EM iteration failed. Carries the iteration index and the method."""

    def __init__(self, message: str, iteration: int, method: str):
        super().__init__(f"{method} iteration {iteration}: {message}")
        self.iteration = iteration
        self.method = method
