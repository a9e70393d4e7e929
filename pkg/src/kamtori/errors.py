"""Exception hierarchy shared by the solver, the certificate engine and the CLI."""


class KamError(Exception):
    """Base class for every error raised by kamtori."""


class ShapeError(KamError, ValueError):
    """Grid shape too small for the requested truncation, or mismatched dims."""


class SymmetryError(KamError):
    """A series that should be real-valued has a non-negligible imaginary part."""


class ResonanceError(KamError):
    """An exact (or numerically exact) resonance k . (omega, alpha) = 0."""

    def __init__(self, message, index=None, divisor=None):
        super().__init__(message)
        self.index = index
        self.divisor = divisor


class SmallDivisorError(ResonanceError):
    """A divisor below the binary64 cutoff was met while solving a cohomological equation."""


class DegenerateFrameError(KamError):
    """L^T G(K) L is (numerically) singular at some grid node."""

    def __init__(self, message, node=None, condition=None):
        super().__init__(message)
        self.node = node
        self.condition = condition


class TwistDegeneracyError(KamError):
    """The averaged torsion <T> is singular."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class DomainError(KamError):
    """The torus leaves the domain box of the Hamiltonian."""

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class DivergenceError(KamError):
    """The Newton iteration stopped contracting."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history


class IntegrationError(KamError):
    """The ODE integrator used for flow validation failed."""


class HypothesisSlackError(KamError):
    """A measured quantity is not strictly below its sigma bound."""

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class ConfigError(KamError, ValueError):
    """Malformed run configuration or unreadable input file."""
