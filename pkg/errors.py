"""
errors.py — Exception hierarchy
================================
Every domain failure raised by the engines derives from SparseLatticeError so
the CLI and the HTTP layer can map it to a clean message. Audit and
certificate violations are NOT exceptions; they are report entries.
"""


class SparseLatticeError(Exception):
    """Base class for all toolkit errors."""


class DimensionMismatchError(SparseLatticeError):
    pass


class QuadratureError(SparseLatticeError):
    """Grid refinement failed to stabilise a periodic integral."""


class StateSpaceTooLarge(SparseLatticeError):
    pass


class ConfigError(SparseLatticeError):
    pass


class BlowUpError(SparseLatticeError):
    """Raised when a trajectory leaves the finite range during integration."""

    def __init__(self, site, step: int, time: float, value: float):
        self.site = tuple(site)
        self.step = step
        self.time = time
        self.value = value
        super().__init__(
            f"blow-up at site {self.site}, step {step} (t={time:.6g}): |U|={value!r}"
        )
