"""Exception hierarchy.

Every error carries an ``exit_code`` so the command line front-end can map
failures onto distinct process exit statuses without a lookup table.
"""


class MaxEntAbstractionError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 10


class ConfigInvalid(MaxEntAbstractionError, ValueError):
    exit_code = 2


class InfeasibleConstraints(MaxEntAbstractionError, ValueError):
    """A constraint target lies outside the achievable moment range."""

    exit_code = 3


class NonConvergence(MaxEntAbstractionError, RuntimeError):
    """An iterative solver hit its iteration cap.

    The final residuals (or loss trace, for learners) are attached so callers
    can inspect how far from convergence the run ended.
    """

    exit_code = 4

    def __init__(self, message, residuals=None, trace=None):
        super().__init__(message)
        self.residuals = residuals
        self.trace = trace


class DegenerateBoundary(MaxEntAbstractionError, ValueError):
    """Targets sit on the moment-polytope boundary with no joint vertex solution."""

    exit_code = 5


class SpaceMismatch(MaxEntAbstractionError, ValueError):
    exit_code = 6


class AbsoluteContinuityViolation(MaxEntAbstractionError, ValueError):
    """KL(p || q) is infinite: q assigns zero mass where p does not."""

    exit_code = 7


class UnsupportedQueryKind(MaxEntAbstractionError, ValueError):
    exit_code = 8


class InfeasibleStep(MaxEntAbstractionError, RuntimeError):
    """A learner's line search could not find any feasible trial point."""

    exit_code = 9

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class GridTooNarrow(MaxEntAbstractionError, ValueError):
    exit_code = 11


class HorizonOverflow(MaxEntAbstractionError, ValueError):
    exit_code = 12


class PathSpaceTooLarge(MaxEntAbstractionError, ValueError):
    exit_code = 13


class ToleranceUnreachable(MaxEntAbstractionError, RuntimeError):
    exit_code = 14


class EnumerationTooLarge(MaxEntAbstractionError, ValueError):
    exit_code = 15


EXIT_CODES = {
    cls.__name__: cls.exit_code
    for cls in [
        ConfigInvalid,
        InfeasibleConstraints,
        NonConvergence,
        DegenerateBoundary,
        SpaceMismatch,
        AbsoluteContinuityViolation,
        UnsupportedQueryKind,
        InfeasibleStep,
        MaxEntAbstractionError,
        GridTooNarrow,
        HorizonOverflow,
        PathSpaceTooLarge,
        ToleranceUnreachable,
        EnumerationTooLarge,
    ]
}
