"""Exception types shared across the package."""


class NsControlError(Exception):
    """Base class for all package-specific errors."""


class RealityViolation(NsControlError):
    """Raw coefficient data breaks the conjugate-symmetry condition."""


class TruncationMismatch(NsControlError):
    """Two fields on incompatible mode sets were combined."""


class NegativeTime(NsControlError):
    """A semigroup or integration time was negative."""


class BlowUp(NsControlError):
    """The V-norm guard was exceeded during integration."""


class NonFinite(NsControlError):
    """A non-finite value appeared in a state vector."""


class NotRepresentable(NsControlError):
    """Target lies outside the computed cone; enlarge the generator policy."""

    def __init__(self, residual, message=None):
        self.residual = residual
        super().__init__(message or f"cone residual {residual:.3e} above tolerance")


class WeightOverflow(NsControlError):
    """Convexified weights cannot be normalised to sum to one."""


class OscillationBudgetExhausted(NsControlError):
    """No oscillation count in the schedule met the interval accuracy."""

    def __init__(self, best_error, interval=None, message=None):
        self.best_error = best_error
        self.interval = interval
        super().__init__(
            message
            or f"oscillation schedule exhausted (best error {best_error:.3e}"
            + (f", interval {interval})" if interval is not None else ")")
        )


class CutoffBudgetExhausted(NsControlError):
    """No cutoff index in the schedule met the stage budget."""

    def __init__(self, best_error, message=None):
        self.best_error = best_error
        super().__init__(message or f"cutoff schedule exhausted (best error {best_error:.3e})")


class SaturationInsufficient(NsControlError):
    """The saturation chain does not cover the requested shell."""


class TargetOutsideTruncation(NsControlError):
    """Target field has support outside the working truncation."""


class NoConvergence(NsControlError):
    """Fixed-point refinement hit the iteration cap."""

    def __init__(self, trace, message=None):
        self.trace = trace
        super().__init__(message or "fixed-point iteration did not converge")


class HypothesisFailed(NsControlError):
    """Measured sup-norm of (phi - id) is too large for the surjectivity argument."""


class ConfigError(NsControlError):
    """Experiment configuration failed validation."""
