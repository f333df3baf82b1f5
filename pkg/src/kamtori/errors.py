"""Exception hierarchy shared by all solver modules."""


class KamError(Exception):
    """Base class for all solver errors."""


class NumericCorruptionError(KamError):
    """Non-finite values encountered where finite data is required."""


class ObstructionError(KamError):
    """A solvability average that must vanish does not.

    Carries the offending average in ``average``.
    """

    def __init__(self, message, average=None):
        super().__init__(message)
        self.average = average


class SmallDivisorError(KamError):
    """A divisor fell below the configured floor.

    ``mode`` names the offending wavenumber, ``divisor`` its modulus.
    """

    def __init__(self, message, mode=None, divisor=None):
        super().__init__(message)
        self.mode = mode
        self.divisor = divisor


class ParameterError(KamError):
    """Invalid model or solver parameter."""


class ModelDomainError(KamError):
    """A map evaluation left the model's valid domain."""


class DegenerateEmbeddingError(KamError):
    """The candidate embedding lost full rank on the grid."""


class TwistDegeneracyError(KamError):
    """The averaged torsion is numerically singular."""


class NoConvergenceError(KamError):
    """Newton iteration failed to reach tolerance.

    ``trace`` holds the residual history.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []


class ContinuationStallError(KamError):
    """Continuation step fell below the minimum step size.

    ``last_good`` is the last parameter value that converged.
    """

    def __init__(self, message, last_good=None):
        super().__init__(message)
        self.last_good = last_good


class InsufficientHyperbolicityError(KamError):
    """Contraction factor of a hyperbolic solve is not below one."""

    def __init__(self, message, kappa=None):
        super().__init__(message)
        self.kappa = kappa


class AmbiguousRankError(KamError):
    """A snapped singular value was too far from both 0 and 1."""


class RegimeViolationError(KamError):
    """Declared contraction regime fails its numerical check."""


class OverflowScalingError(KamError):
    """Doubling products overflowed; the mirrored regime may apply."""


class UnitMultiplierError(KamError):
    """Reduced multiplier within tolerance of modulus one (small divisors)."""


class SignChangeError(KamError):
    """Coefficient ratio changes sign on the grid."""


class ResonanceError(KamError):
    """Divisor margin for a Taylor order fell below tolerance.

    ``order`` names the offending order.
    """

    def __init__(self, message, order=None):
        super().__init__(message)
        self.order = order


class OrderContractError(KamError):
    """Input jet violates the vanishing-order precondition."""


class DegeneratePairingError(KamError):
    """Solvability denominator of the multiplier update vanished."""


class UnsupportedRankError(KamError):
    """Operation restricted to rank-1 bundles received a higher rank."""


class FormatError(KamError):
    """Corrupt or unrecognized coefficient file."""


class ConfigError(KamError):
    """Invalid run configuration."""


class UnreliableRatesWarning(UserWarning):
    """Rate fit residual too large for the estimate to be trusted."""
