"""Diophantine frequencies and the small-divisor solver.

The operator here is ``L u = -(omega . d_theta + alpha . d_phi) u``; on the
Fourier side it multiplies the mode ``k`` by ``-2 pi i k.(omega, alpha)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ResonanceError, ShapeError, SmallDivisorError
from .fourier import TWO_PI, FourierSeries, TorusDims, as_trunc, l1_modulus, wavenumbers

RESONANCE_CUTOFF = 1e-15
DIVISOR_CUTOFF = 1e-14


@dataclass(frozen=True)
class Frequencies:
    omega: np.ndarray
    alpha: np.ndarray
    gamma: float
    tau: float

    def __post_init__(self):
        omega = np.atleast_1d(np.asarray(self.omega, dtype=float)).copy()
        alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float)).copy()
        omega.setflags(write=False)
        alpha.setflags(write=False)
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "alpha", alpha)
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.tau < omega.size + alpha.size - 1:
            raise ValueError(
                f"tau={self.tau} below n + ell - 1 = {omega.size + alpha.size - 1}"
            )

    @property
    def dims(self) -> TorusDims:
        return TorusDims(self.omega.size, self.alpha.size)

    @property
    def nu(self) -> np.ndarray:
        """The full frequency vector (omega, alpha)."""
        return np.concatenate([self.omega, self.alpha])


@dataclass(frozen=True)
class DiophantineReport:
    box_radius: int
    effective_gamma: float
    worst_index: tuple[int, ...]
    gamma: float
    tau: float

    @property
    def passed(self) -> bool:
        return self.effective_gamma >= self.gamma

    @property
    def certified_gamma(self) -> float:
        """The gamma that downstream bounds may use: never above what was scanned."""
        return min(self.gamma, self.effective_gamma)

    @property
    def substituted(self) -> bool:
        return self.effective_gamma < self.gamma


def _canonical_sign(k: np.ndarray) -> tuple[int, ...]:
    nz = np.flatnonzero(k)
    if nz.size and k[nz[0]] < 0:
        k = -k
    return tuple(int(x) for x in k)


def _shell_vectors(d: int, radius: int):
    """Yield integer vectors with 0 < |k|_1 <= radius, chunked by first entry."""
    rest = np.array(np.meshgrid(*[np.arange(-radius, radius + 1)] * (d - 1), indexing="ij"))
    rest = rest.reshape(d - 1, -1).T if d > 1 else np.zeros((1, 0), dtype=int)
    rest_l1 = np.abs(rest).sum(axis=1)
    for k0 in range(-radius, radius + 1):
        keep = rest_l1 + abs(k0) <= radius
        block = np.column_stack([np.full(keep.sum(), k0), rest[keep]]).astype(np.int64)
        if k0 == 0:
            block = block[np.abs(block).sum(axis=1) > 0]
        if block.size:
            yield block


def _dot(k: np.ndarray, nu: np.ndarray) -> np.ndarray:
    # fixed left-to-right accumulation so scans are reproducible
    acc = k[:, 0] * nu[0]
    for j in range(1, nu.size):
        acc = acc + k[:, j] * nu[j]
    return acc


def check_diophantine(freqs: Frequencies, box_radius: int) -> DiophantineReport:
    """Scan every 0 < |k|_1 <= box_radius for the Diophantine constant."""
    if box_radius < 1:
        raise ValueError("box_radius must be at least 1")
    nu = freqs.nu
    best = np.inf
    worst = None
    resonant = None
    for block in _shell_vectors(nu.size, box_radius):
        div = np.abs(_dot(block, nu))
        l1 = np.abs(block).sum(axis=1).astype(float)
        hits = np.flatnonzero(div < RESONANCE_CUTOFF)
        if hits.size:
            i = hits[np.argmin(l1[hits])]
            if resonant is None or l1[i] < np.abs(resonant).sum():
                resonant = block[i].copy()
        vals = div * l1**freqs.tau
        i = int(np.argmin(vals))
        if vals[i] < best:
            best = float(vals[i])
            worst = block[i].copy()
    if resonant is not None:
        k = _canonical_sign(resonant)
        raise ResonanceError(f"exact resonance k={k}: k.(omega, alpha) = 0", index=k, divisor=0.0)
    return DiophantineReport(box_radius, best, _canonical_sign(worst), freqs.gamma, freqs.tau)


def divisors(trunc, nu: np.ndarray) -> np.ndarray:
    """k.(omega, alpha) over the centered mode array."""
    ks = wavenumbers(trunc)
    acc = ks[0] * nu[0]
    for k, v in zip(ks[1:], nu[1:]):
        acc = acc + k * v
    return acc


def lie_coeffs(coeffs: np.ndarray, trunc, nu: np.ndarray) -> np.ndarray:
    return coeffs * (-1j * TWO_PI * divisors(trunc, nu))


def solve_coeffs(coeffs: np.ndarray, trunc, nu: np.ndarray) -> np.ndarray:
    """Zero-average solution of L u = v - <v> for stacked coefficient arrays."""
    div = divisors(trunc, nu)
    center = tuple(trunc)
    small = np.abs(div) < DIVISOR_CUTOFF
    small[center] = False
    if small.any():
        pos = np.argwhere(small)[0]
        k = tuple(int(p - t) for p, t in zip(pos, trunc))
        raise SmallDivisorError(
            f"small divisor |k.(omega, alpha)| = {abs(div[tuple(pos)]):.3e} at k={k}",
            index=k,
            divisor=float(div[tuple(pos)]),
        )
    safe = np.where(div == 0, 1.0, div)
    factor = np.where(div == 0, 0.0, -1.0 / (2j * np.pi * safe))
    factor[center] = 0.0
    return coeffs * factor


def lie_derivative(u: FourierSeries, freqs: Frequencies) -> FourierSeries:
    _match(u, freqs)
    return FourierSeries(u.dims, u.trunc, lie_coeffs(u.coeffs, u.trunc, freqs.nu))


def solve_cohomological(v: FourierSeries, freqs: Frequencies) -> FourierSeries:
    _match(v, freqs)
    return FourierSeries(v.dims, v.trunc, solve_coeffs(v.coeffs, v.trunc, freqs.nu))


def _match(u: FourierSeries, freqs: Frequencies) -> None:
    if u.dims != freqs.dims:
        raise ShapeError(f"series dims {u.dims} do not match frequencies {freqs.dims}")


def russmann_bound(freqs: Frequencies, delta: float, dims: TorusDims, trunc, gamma=None) -> float:
    """Computed constant c_R of ``|R v|_{rho-delta} <= c_R / (gamma delta^tau) |v|_rho``.

    Modes inside the truncation box use their actual divisors; modes outside
    use the Diophantine lower bound ``gamma / |k|_1^tau``.  The norms are the
    weighted Fourier norms of :func:`kamtori.fourier.analytic_norm`, for which
    the per-mode maximum is exact.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    gamma = freqs.gamma if gamma is None else float(gamma)
    tau = freqs.tau
    trunc = as_trunc(trunc, dims)
    div = np.abs(divisors(trunc, freqs.nu))
    l1 = l1_modulus(trunc)
    mask = l1 > 0
    if np.any(div[mask] < DIVISOR_CUTOFF):
        raise SmallDivisorError("resonant mode inside the truncation box")
    inside = float(np.max(np.exp(-TWO_PI * l1[mask] * delta) / (TWO_PI * div[mask])))
    m0 = min(trunc) + 1
    m = max(float(m0), tau / (TWO_PI * delta))
    tail = m**tau * np.exp(-TWO_PI * m * delta) / (TWO_PI * gamma)
    return float(gamma * delta**tau * max(inside, tail))
