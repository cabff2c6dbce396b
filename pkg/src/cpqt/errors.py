"""Exception types shared across the package."""


class CPQTError(Exception):
    """Base class for all package-specific errors."""


class DimensionMismatchError(CPQTError, ValueError):
    """Operator or state shapes are incompatible."""


class NotHermitianError(CPQTError, ValueError):
    """An operator required to be Hermitian is not (within tolerance)."""


class NotPureError(CPQTError, ValueError):
    """A state required to be pure is mixed beyond tolerance."""


class DarkStateError(CPQTError, ValueError):
    """A jump update was requested from a state the jump operator annihilates."""


class WeightUnderflowError(CPQTError, FloatingPointError):
    """The trace of an unnormalized state fell below the underflow floor."""


class StepSizeError(CPQTError, ValueError):
    """The time step is too large for the requested operation."""


class QuadratureError(CPQTError, RuntimeError):
    """Numerical quadrature failed to converge."""


class InsufficientEnsembleError(CPQTError, RuntimeError):
    """Too few ensemble members (or all weights underflowed) to proceed."""


class ConfigError(CPQTError, ValueError):
    """Invalid experiment configuration."""
