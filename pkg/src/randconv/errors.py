"""Exception taxonomy shared across the package.

Everything derives from RandconvError so callers can catch library failures
in one clause; the ValueError mixin keeps plain scripts working too.
"""
from __future__ import annotations


class RandconvError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(RandconvError, ValueError):
    """Array or grid dimensions do not fit the requested operation."""


class ParameterError(RandconvError, ValueError):
    """A scalar argument or layer parameter is out of its allowed range."""


class DataError(RandconvError, ValueError):
    """External input (file, image, dataset) is missing or malformed."""


class IsotropyError(ParameterError):
    """The closed-form limits need rotation-invariant filter distributions."""


class WrongVariantError(ParameterError):
    """Net uses the other pooling variant than the requested recurrence."""


class AssumptionError(ParameterError):
    """A structural precondition (partition, route pattern) is violated."""


class DegenerateInputError(RandconvError, ValueError):
    """Input lies in the measure-zero set where the quantity is undefined."""


class VerificationError(RandconvError):
    """A Monte-Carlo or cross-implementation check failed its gate."""
