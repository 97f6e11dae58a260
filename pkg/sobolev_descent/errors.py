"""
Exceptions raised by sobolev_descent.

The command line interface maps them to exit codes, see the EXIT_*
constants of sobolev_descent.cli.
"""


class SobolevDescentError(Exception):
    """Base class of every error raised by the package."""


class ParameterError(SobolevDescentError, ValueError):
    """Invalid dimensions, non positive hyperparameters, shape mismatch."""


class NumericalError(SobolevDescentError, ArithmeticError):
    """A factorization or an eigensolver did not succeed."""


class DivergenceError(NumericalError):
    """
    Particle coordinates became non finite during a descent, usually
    because the step size is too large.
    """

    def __init__(self, step, message=None):
        self.step = step
        if message is None:
            message = (
                f"Non finite particle coordinates at step {step}, "
                "try a smaller step size (eps)."
            )
        super().__init__(message)


class DataIOError(SobolevDescentError, OSError):
    """An image, csv or configuration file could not be read or written."""
