"""Exception types shared across the package."""


class MfchaosError(Exception):
    """Base class for all package errors."""


class SingularPoint(MfchaosError):
    """Unbounded kernel evaluated at its singularity."""


class DimensionMismatch(MfchaosError):
    """Point or field dimension does not match the kernel's."""


class Unsupported(MfchaosError):
    """Operation not available for this kernel family."""


class NotTorus(MfchaosError):
    """Operation requires a periodic domain."""


class UnnormalizedDensity(MfchaosError):
    """Density does not integrate to one (or is negative)."""


class CollisionError(MfchaosError):
    """Two particles coincide (or come closer than r_min with policy=error)."""


class CFLViolation(MfchaosError):
    """Transport step exceeds the CFL limit of the grid."""


class DegenerateDensity(MfchaosError):
    """Positivity clamp triggered on too large a fraction of cells."""


class MemoryCap(MfchaosError):
    """Requested dense tensor exceeds the configured entry cap."""


class IndexRange(MfchaosError):
    """Slot index outside the tensor's order."""


class StateCap(MfchaosError):
    """Joint state space exceeds the configured cap."""


class StabilityViolation(MfchaosError):
    """Explicit time step outside the stability region."""


class ConfigError(MfchaosError):
    """Experiment configuration failed schema validation."""
