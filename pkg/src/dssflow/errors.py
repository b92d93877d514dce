"""Exception types and the tagged result used for divergent norms.

Every error derives from :class:`DssError` and carries an ``exit_code`` used by
the command-line runner (2 validation, 3 numerical convergence, 4 certificate).
"""

from __future__ import annotations

from dataclasses import dataclass


class DssError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 2

    def __init__(self, message, **details):
        super().__init__(message)
        self.details = details

    def to_dict(self):
        out = {"error": type(self).__name__, "message": str(self)}
        out.update({k: _plain(v) for k, v in self.details.items()})
        return out


def _plain(v):
    try:
        import numpy as np

        if isinstance(v, np.generic):
            return v.item()
        if isinstance(v, np.ndarray):
            return v.tolist()
    except ImportError:  # pragma: no cover
        pass
    return v


# validation-type errors (exit code 2)
class InvalidScaleError(DssError, ValueError):
    pass


class InvalidResolutionError(DssError, ValueError):
    pass


class InvalidExponentError(DssError, ValueError):
    pass


class SingularPointError(DssError, ValueError):
    pass


class OutOfShellError(DssError, ValueError):
    pass


class IntegrabilityError(DssError, ValueError):
    pass


class RegionError(DssError, ValueError):
    pass


class ConfigError(DssError, ValueError):
    pass


# numerical errors (exit code 3)
class ConvergenceError(DssError, ArithmeticError):
    exit_code = 3


class DivergenceError(ConvergenceError):
    pass


class CoverageError(ConvergenceError):
    pass


# certificate errors (exit code 4)
class CannotCertifyError(DssError):
    exit_code = 4


class TuningFailureError(DssError):
    exit_code = 4


class PreconditionError(DssError):
    exit_code = 4


@dataclass(frozen=True)
class Divergent:
    """Tagged outcome for a norm that is infinite analytically.

    Never compared as a number: ``float(Divergent(...))`` raises.
    """

    reason: str

    def __float__(self):
        raise TypeError(f"divergent norm has no numeric value ({self.reason})")

    def __bool__(self):
        return True
