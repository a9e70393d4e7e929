"""Hamiltonian systems with quasi-periodic time dependence.

A system is a bundle of batched evaluators: ``h(z, phi) -> (P,)``,
``grad -> (P, 2n)``, ``hess -> (P, 2n, 2n)`` and ``third -> (P, 2n, 2n, 2n)``
for points ``z`` of shape ``(P, 2n)`` and external angles ``phi`` of shape
``(P, ell)``.  The evaluators must accept complex input, since the
certificate samples them on a complex neighbourhood of the domain.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import solve_ivp

from . import cohomology, geometry
from .errors import DomainError, IntegrationError, ShapeError
from .fourier import (
    TWO_PI,
    TorusDims,
    VectorSeries,
    analyze,
    as_shape,
    default_shape,
    from_points,
    grid_nodes,
    synthesize,
    to_points,
)


@dataclass(frozen=True)
class DomainBox:
    """Axis-aligned box B in phase space; infinite bounds mark angle-like coordinates."""

    lower: tuple
    upper: tuple
    imag_radius: float = 0.2

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if len(lo) != len(hi) or any(a >= b for a, b in zip(lo, hi)):
            raise ValueError(f"invalid box bounds {lo} / {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return len(self.lower)

    def margins(self, points: np.ndarray) -> np.ndarray:
        """Signed distance of each real point to the boundary (negative outside)."""
        pts = np.real(np.atleast_2d(points))
        lo = np.array(self.lower)
        hi = np.array(self.upper)
        d = np.minimum(pts - lo, hi - pts)
        return d.min(axis=1)

    def distance(self, points: np.ndarray) -> float:
        return float(np.min(self.margins(points)))


@dataclass(frozen=True, eq=False)
class HamiltonianSystem:
    n: int
    ell: int
    h: Callable
    grad: Callable
    hess: Callable
    structure: geometry.SymplecticStructure
    box: DomainBox
    third: Optional[Callable] = None
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.structure.n != self.n:
            raise ShapeError("structure dimension does not match the system")
        if self.box.dim != 2 * self.n:
            raise ShapeError("domain box dimension does not match the system")

    @property
    def dims(self) -> TorusDims:
        return TorusDims(self.n, self.ell)

    def vector_field(self, z, phi) -> np.ndarray:
        """Z_H = Omega(z)^{-1} grad H."""
        om = self.structure.omega(z)
        return np.linalg.solve(om, self.grad(z, phi)[..., None])[..., 0]

    def field_jacobian(self, z, phi) -> np.ndarray:
        """D_z Z_H as ``(P, 2n, 2n)``."""
        om = self.structure.omega(z)
        hz = self.hess(z, phi)
        out = np.linalg.solve(om, hz)
        if not self.structure.constant:
            zf = np.linalg.solve(om, self.grad(z, phi)[..., None])[..., 0]
            dom = self.structure.domega(z)  # (P, i, j, l)
            # d_l (Omega^{-1}) g = -Omega^{-1} (d_l Omega) Z
            out = out - np.linalg.solve(om, np.einsum("pijl,pj->pil", dom, zf))
        return out

    def field_hessian(self, z, phi) -> np.ndarray:
        """D_z^2 Z_H as ``(P, 2n, 2n, 2n)`` with entry ``[p, i, j, l] = d_j d_l Z_i``."""
        if self.third is None:
            raise NotImplementedError(f"system {self.name!r} has no third derivatives")
        om = self.structure.omega(z)
        m = 2 * self.n
        if self.structure.constant:
            t3 = self.third(z, phi).reshape(z.shape[0], m, m * m)
            return np.linalg.solve(om, t3).reshape(z.shape[0], m, m, m)
        zf = self.vector_field(z, phi)
        dz = self.field_jacobian(z, phi)
        dom = self.structure.domega(z)
        d2om = self.structure.d2omega(z)
        # differentiate Omega DZ = Hess - dOmega[Z] once more
        rhs = self.third(z, phi) - np.einsum("pijlm,pj->pilm", d2om, zf)
        rhs = rhs - np.einsum("pijl,pjm->pilm", dom, dz) - np.einsum("pijm,pjl->pilm", dom, dz)
        rhs = rhs.reshape(z.shape[0], m, m * m)
        return np.linalg.solve(om, rhs).reshape(z.shape[0], m, m, m)

    def jacobi_residual(self, z, phi) -> float:
        """max |D_z Omega[Z] + DZ^T Omega + Omega DZ| at the given points."""
        om = self.structure.omega(z)
        dz = self.field_jacobian(z, phi)
        zf = self.vector_field(z, phi)
        dom = np.einsum("pijl,pl->pij", self.structure.domega(z), zf)
        r = dom + np.swapaxes(dz, 1, 2) @ om + om @ dz
        return float(np.max(np.abs(r)))


def check_derivatives(system: HamiltonianSystem, z, phi, h: float = 1e-5) -> dict:
    """Centered finite-difference self-test of the supplied evaluators.

    Returns the maximal relative mismatch of grad, hess, third and D_z Z_H.
    """
    z = np.atleast_2d(np.asarray(z, dtype=float))
    phi = np.atleast_2d(np.asarray(phi, dtype=float))
    m = 2 * system.n

    def fd(fn):
        cols = []
        for l in range(m):
            e = np.zeros(m)
            e[l] = h
            cols.append((fn(z + e, phi) - fn(z - e, phi)) / (2 * h))
        return np.stack(cols, axis=-1)

    def rel(a, b):
        return float(np.max(np.abs(a - b)) / max(1.0, np.max(np.abs(b))))

    out = {
        "grad": rel(fd(system.h), system.grad(z, phi)),
        "hess": rel(fd(system.grad), system.hess(z, phi)),
        "field_jacobian": rel(fd(system.vector_field), system.field_jacobian(z, phi)),
    }
    if system.third is not None:
        out["third"] = rel(fd(system.hess), system.third(z, phi))
        out["field_hessian"] = rel(fd(system.field_jacobian), system.field_hessian(z, phi))
    return out


# ---------------------------------------------------------------------------
# built-in systems


def forced_pendulum(epsilon: float, ell: int = 1, y_range=(-1.0, 2.0), imag_radius: float = 0.2) -> HamiltonianSystem:
    """H(x, y, phi) = y^2/2 + eps cos(2 pi x) (1 + sum_j cos(2 pi phi_j)), canonical form.

    ``x`` is an angle measured in turns; ``epsilon = 0`` is the integrable rotator.
    """
    eps = float(epsilon)
    if eps < 0:
        raise ValueError("epsilon must be nonnegative")

    def forcing(phi):
        return 1.0 + np.cos(TWO_PI * phi).sum(axis=1)

    def h(z, phi):
        return 0.5 * z[:, 1] ** 2 + eps * np.cos(TWO_PI * z[:, 0]) * forcing(phi)

    def grad(z, phi):
        out = np.empty_like(z, dtype=np.result_type(z, phi, float))
        out[:, 0] = -TWO_PI * eps * np.sin(TWO_PI * z[:, 0]) * forcing(phi)
        out[:, 1] = z[:, 1]
        return out

    def hess(z, phi):
        out = np.zeros((z.shape[0], 2, 2), dtype=np.result_type(z, phi, float))
        out[:, 0, 0] = -TWO_PI**2 * eps * np.cos(TWO_PI * z[:, 0]) * forcing(phi)
        out[:, 1, 1] = 1.0
        return out

    def third(z, phi):
        out = np.zeros((z.shape[0], 2, 2, 2), dtype=np.result_type(z, phi, float))
        out[:, 0, 0, 0] = TWO_PI**3 * eps * np.sin(TWO_PI * z[:, 0]) * forcing(phi)
        return out

    box = DomainBox((-np.inf, y_range[0]), (np.inf, y_range[1]), imag_radius)
    return HamiltonianSystem(
        1, ell, h, grad, hess, geometry.canonical(1), box, third=third,
        name="pendulum", params={"epsilon": eps, "ell": ell},
    )


def rotator(ell: int = 1, y_range=(-1.0, 2.0)) -> HamiltonianSystem:
    s = forced_pendulum(0.0, ell, y_range)
    return HamiltonianSystem(s.n, s.ell, s.h, s.grad, s.hess, s.structure, s.box, s.third, "rotator", {"ell": ell})


def conformal_pendulum(epsilon: float, amplitude: float = 0.2, y_range=(-1.0, 2.0)) -> HamiltonianSystem:
    """The forced pendulum Hamiltonian on the conformal planar structure (a Case II example)."""
    base = forced_pendulum(epsilon, 1, y_range)
    st = geometry.conformal_structure(amplitude)
    return HamiltonianSystem(
        1, 1, base.h, base.grad, base.hess, st, base.box, third=base.third,
        name="conformal_pendulum", params={"epsilon": float(epsilon), "amplitude": float(amplitude)},
    )


SYSTEMS = {"pendulum": forced_pendulum, "rotator": rotator, "conformal_pendulum": conformal_pendulum}


# ---------------------------------------------------------------------------
# along a torus


def phi_points(dims: TorusDims, shape) -> np.ndarray:
    nodes = grid_nodes(shape)
    return np.stack([nodes[dims.n + j].ravel() for j in range(dims.ell)], axis=1)


def field_on_torus(K: geometry.TorusEmbedding, system: HamiltonianSystem, shape=None) -> np.ndarray:
    """Z_H(K(node), phi(node)) as ``(2n, *grid)``."""
    shape = as_shape(shape if shape is not None else default_shape(K.trunc), K.dims)
    z = to_points(K.on_grid(shape), 1)
    margins = system.box.margins(z)
    bad = int(np.argmin(margins))
    if margins[bad] <= 0:
        pos = np.unravel_index(bad, shape)
        node = tuple(float(p) / m for p, m in zip(pos, shape))
        raise DomainError(f"torus leaves the domain box at node {node} (z={z[bad]})", node=node)
    zf = system.vector_field(z, phi_points(K.dims, shape))
    return from_points(zf, shape)


@dataclass(frozen=True, eq=False)
class InvarianceError:
    series: VectorSeries
    nodal: np.ndarray
    truncation_residual: float

    @property
    def sup(self) -> float:
        return float(np.max(np.abs(self.nodal)))

    def norm(self, rho: float) -> float:
        return self.series.norm(rho)


def invariance_error(K: geometry.TorusEmbedding, system: HamiltonianSystem, freqs, shape=None) -> InvarianceError:
    """E = Z_H(K, phi) + L_{omega,alpha} K, nodal and truncated."""
    shape = as_shape(shape if shape is not None else default_shape(K.trunc), K.dims)
    vals = field_on_torus(K, system, shape) + synthesize(K.lie_coeffs(freqs), shape)
    coeffs, resid = analyze(vals, K.trunc, return_residual=True)
    return InvarianceError(VectorSeries(K.dims, K.trunc, coeffs), vals, float(np.max(resid)))


@dataclass(frozen=True)
class FlowValidation:
    max_deviation: float
    per_sample: np.ndarray
    initial_angles: np.ndarray
    t_final: float


def flow_validate(
    K: geometry.TorusEmbedding,
    system: HamiltonianSystem,
    freqs,
    t_final: float = 20.0,
    samples: int = 16,
    seed: int = 0,
    n_times: int = 41,
    tol: float = 1e-11,
    workers: int = 1,
) -> FlowValidation:
    """Integrate the flow from points of the torus and compare with K at rotated angles."""
    rng = np.random.default_rng(seed)
    dims = K.dims
    angles = rng.random((samples, dims.d))
    times = np.linspace(0.0, t_final, n_times)
    nu = freqs.nu
    def one(i):
        a0 = angles[i]
        phi0 = a0[dims.n:]

        def rhs(t, z):
            phi = (phi0 + t * freqs.alpha)[None, :]
            return system.vector_field(z[None, :], phi)[0]

        z0 = K.at(a0[None, :])[0]
        sol = solve_ivp(rhs, (0.0, t_final), z0, method="DOP853", t_eval=times, rtol=tol, atol=tol)
        if not sol.success:
            raise IntegrationError(f"integration failed for sample {i}: {sol.message}")
        pred = K.at(a0[None, :] + times[:, None] * nu[None, :])
        if np.any(system.box.margins(sol.y.T) <= 0):
            raise DomainError(f"flow of sample {i} leaves the domain box")
        return float(np.max(np.abs(sol.y.T - pred)))

    # results are stored by sample index, so the output does not depend on scheduling
    if workers > 1 and samples > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            dev = np.array(list(pool.map(one, range(samples))), dtype=float)
    else:
        dev = np.array([one(i) for i in range(samples)], dtype=float)
    return FlowValidation(float(dev.max()) if samples else 0.0, dev, angles, float(t_final))
