"""Exception taxonomy shared across the package.

Every failure mode that callers are expected to branch on gets its own
class; generic misuse surfaces as :class:`InvalidInputError` (a
``ValueError`` so that sloppy callers still get something familiar).
"""


class MajorantError(Exception):
    """Base class for all package-specific errors."""


class InvalidInputError(MajorantError, ValueError):
    """Malformed caller input: non-finite entries, bad shapes, bad ranges."""


class SingularGramError(MajorantError):
    """Cholesky factorisation failed even after jitter escalation."""


class DivergedError(MajorantError):
    """An iterate or gradient became non-finite."""


class DomainError(MajorantError):
    """A value left the domain of a map (mirror inverse, arccos argument)."""


class SubproblemError(MajorantError):
    """An inner solve (the cubic-regularised step's bisection) failed to converge."""


class SingularCurvatureError(MajorantError):
    """Gauss-Newton system is singular and no regulariser was supplied."""


class ZeroGradientSignal(MajorantError):
    """All-layer gradient is zero: an update step should be skipped, not scaled."""


class DegenerateLayerError(MajorantError):
    """A layer matrix (or its gradient) has zero norm where a ratio needs it."""


class PsdViolationError(MajorantError):
    """A quadratic form that must be nonnegative came out negative beyond tolerance."""


class MethodSwitchError(MajorantError):
    """Rejection sampling was requested where its acceptance rate is hopeless."""


class AmbiguousMeanError(MajorantError):
    """The ensemble mean classifies the probe input as exactly zero."""


class IdxFormatError(MajorantError):
    """An IDX file's magic number is wrong."""


class IdxLengthError(MajorantError):
    """An IDX file is shorter than its header promises."""


class IdxConsistencyError(MajorantError):
    """Image and label files disagree on the example count."""


class InsufficientClassError(MajorantError):
    """A requested class has too few examples for the requested split."""


class BalanceError(MajorantError):
    """Synthetic labelling stayed outside the class-balance window after retries."""


class ConfigError(MajorantError):
    """Configuration file or value is invalid (CLI exit code 1)."""


class NonInterpolationWarning(UserWarning):
    """Margin-projected training finished above its fit threshold."""
