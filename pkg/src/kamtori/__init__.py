"""Invariant tori of Hamiltonian systems with quasi-periodic time dependence.

The package solves the invariance equation for a torus embedding with a
quasi-Newton iteration in Fourier space, checks the result against the flow,
and evaluates an a-posteriori certificate with explicit constants.
"""

from .cohomology import Frequencies, check_diophantine, solve_cohomological
from .errors import KamError
from .geometry import TorusEmbedding, build_frame, read_embedding, write_embedding
from .newton import NewtonConfig, newton_step, run_iteration
from .system import HamiltonianSystem, flow_validate, forced_pendulum, invariance_error, rotator

__version__ = "0.1.0"

__all__ = [
    "Frequencies",
    "HamiltonianSystem",
    "KamError",
    "NewtonConfig",
    "TorusEmbedding",
    "build_frame",
    "check_diophantine",
    "flow_validate",
    "forced_pendulum",
    "invariance_error",
    "newton_step",
    "read_embedding",
    "rotator",
    "run_iteration",
    "solve_cohomological",
    "write_embedding",
]
