"""Exception hierarchy.

Errors that map to CLI exit codes carry an ``exit_code`` attribute; everything
else surfaces as exit code 1 through the generic handler in cli.main.
"""

from __future__ import annotations


class ReifError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(ReifError):
    """Run configuration failed validation."""

    exit_code = 2


class InputUnreadable(ReifError):
    """Input file missing, unparseable, or dimensionally inconsistent."""

    exit_code = 3


class DepthExceeded(ReifError):
    """Recursive cover hit the configured depth cap before terminating."""

    exit_code = 4

    def __init__(self, message: str, certificate=None):
        super().__init__(message)
        self.certificate = certificate


class PartialCertificate(ReifError):
    """Certificate is marked partial; the requested quantity needs a full run."""


class DegenerateInput(ReifError):
    """Vectors or point sets too degenerate for the requested operation."""


class EmptyBall(ReifError):
    """A ball that was required to contain sample points contains none."""


class ParamOutOfRange(ReifError):
    """Fixture or ladder parameter outside its documented range."""


class RankMismatch(ReifError):
    """Comparison between subspaces of different dimension."""


class DegreeMismatch(ReifError):
    """Form degree does not match the plane dimension it is applied to."""


class EigengapTooSmall(ReifError):
    """Averaged projector has no usable spectral gap at the requested rank."""


class NoConvergence(ReifError):
    """Iterative solve exhausted its iteration budget."""


class FiberDegenerate(ReifError):
    """Restricted Hessian on a fiber lost definiteness."""


class NotCovered(ReifError):
    """Query point has zero partition mass; no weights are defined there."""
