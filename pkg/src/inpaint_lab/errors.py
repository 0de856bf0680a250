"""Shared exception types."""


class InpaintLabError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(InpaintLabError):
    """Tensor shapes or extents violate an operation's contract."""


class ParameterError(InpaintLabError):
    """A numeric parameter is outside its valid range."""


class DegenerateDistributionError(InpaintLabError):
    """A softmax slice contained only -inf logits."""


class GradCheckError(InpaintLabError):
    """Finite-difference probing hit a non-finite function value."""


class TrajectoryError(InpaintLabError):
    """A box trajectory is malformed (missing endpoints, bad ordering)."""


class EmptyMaskError(InpaintLabError):
    """An operation that needs set pixels received an all-zero mask."""


class GenerationInfeasible(InpaintLabError):
    """Scene constraints cannot be satisfied; retry with another seed."""


class InfeasibleParameters(InpaintLabError):
    """Camera parameters collapse the crop window below one pixel."""


class UndefinedShiftError(InpaintLabError):
    """Phase correlation on a zero-variance frame."""


class BindingError(InpaintLabError):
    """A modulation binding references tokens outside the prompt."""


class ConfigError(InpaintLabError):
    """Inconsistent model/sampler configuration."""


class ValidationError(InpaintLabError):
    """A job spec failed validation. Carries per-field messages."""

    def __init__(self, field_errors):
        self.field_errors = dict(field_errors)
        super().__init__("; ".join(f"{k}: {v}" for k, v in self.field_errors.items()))
