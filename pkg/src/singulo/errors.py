"""Exception hierarchy shared across the package.

``AssumptionViolated`` groups the failures that mean the problem falls
outside the standing structural hypotheses (the CLI maps these to exit
code 2); everything else is an ordinary computational failure.
"""


class SinguloError(Exception):
    """Base class for all package-specific errors."""


class ProblemInvalid(SinguloError):
    """The LQ problem instance fails structural validation."""


class AssumptionViolated(SinguloError):
    """The standing hypotheses on the singular LQ problem do not hold."""


class CommutativityViolated(AssumptionViolated):
    """The zero-commutator condition on the singular blocks fails."""


class NotPSD(AssumptionViolated):
    """A reduced control-weight candidate has a genuinely negative eigenvalue."""


class OrderExceeded(AssumptionViolated):
    """The desingularization recursion did not terminate within n levels."""


class IllConditioned(SinguloError):
    """The boundary-value shooting system is numerically singular.

    Signals boundary data near a conjugate point or a horizon beyond
    which the infimum ceases to be finite.
    """


class NotStabilizable(SinguloError):
    """(A, B) fails the PBH stabilizability test."""


class NoStabilizingSolution(SinguloError):
    """No stabilizing Riccati solution could be extracted."""


class NonConvergent(SinguloError):
    """Richardson extrapolation failed to settle within tolerance."""


class RankDeficientBasis(SinguloError):
    """Jump-basis columns are dependent; the jump expansion is not unique."""


class ResidualTooLarge(SinguloError):
    """A boundary jump leaves the span of the jump basis."""


class SingularM(SinguloError):
    """The junction system for the polynomial approximant is singular."""


class GridTooCoarse(SinguloError):
    """A sampling grid does not resolve the smallest feature interval."""


class DegenerateGaps(SinguloError):
    """Optimality gaps are non-positive or span too narrow a range to fit."""


class ScheduleViolated(SinguloError):
    """The regularization schedule bound failed beyond tolerance."""


class Blowup(SinguloError):
    """A trajectory exceeded the overflow guard during integration."""


class SteeringInvalid(SinguloError):
    """A provided steering control does not reach its declared endpoint."""
