"""Truncated real Fourier series on T^n x T^ell.

Angles live in [0, 1) and modes use the ``exp(2 pi i k.x)`` convention.  A
series stores its coefficients in a *centered* dense array: the amplitude of
the multi-index ``k`` sits at position ``k + N`` along every axis, where ``N``
is the per-axis cutoff.  Internal angles come first, external angles last.

Grid values are samples on the regular lattice ``x_j = i / M_j``.  Analysis
carries the ``1 / prod(M)`` normalization; synthesis carries none.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ShapeError, SymmetryError

TWO_PI = 2.0 * np.pi

# imaginary residual tolerated when evaluating a series pointwise
_IMAG_FAIL = 1e-9


@dataclass(frozen=True)
class TorusDims:
    """Number of internal (``n``) and external (``ell``) angles."""

    n: int
    ell: int

    def __post_init__(self):
        if self.n < 1 or self.ell < 1:
            raise ShapeError(f"need n >= 1 and ell >= 1, got n={self.n}, ell={self.ell}")

    @property
    def d(self) -> int:
        return self.n + self.ell


@dataclass(frozen=True)
class StripRadius:
    rho: float

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError(f"strip radius must be positive, got {self.rho}")


def as_trunc(trunc, dims: TorusDims) -> tuple[int, ...]:
    """Normalize a cutoff given as an int or a sequence to a per-axis tuple."""
    if np.isscalar(trunc):
        out = (int(trunc),) * dims.d
    else:
        out = tuple(int(t) for t in trunc)
    if len(out) != dims.d:
        raise ShapeError(f"truncation {out} does not match d={dims.d}")
    if any(t < 0 for t in out):
        raise ShapeError(f"negative cutoff in {out}")
    return out


def as_shape(shape, dims: TorusDims) -> tuple[int, ...]:
    if np.isscalar(shape):
        out = (int(shape),) * dims.d
    else:
        out = tuple(int(m) for m in shape)
    if len(out) != dims.d:
        raise ShapeError(f"grid shape {out} does not match d={dims.d}")
    return out


def default_shape(trunc: Sequence[int]) -> tuple[int, ...]:
    """Oversampled grid: four samples per retained mode, never below 2N+2."""
    return tuple(max(4 * t, 2 * t + 2, 4) for t in trunc)


def check_margin(shape: Sequence[int], trunc: Sequence[int]) -> None:
    for j, (m, t) in enumerate(zip(shape, trunc)):
        if m < 2 * t + 2:
            raise ShapeError(
                f"axis {j}: grid size {m} is below the anti-aliasing margin 2*{t}+2={2 * t + 2}"
            )


# ---------------------------------------------------------------------------
# low level array kernels (leading axes are components, trailing d axes modes)


def _mode_slots(trunc: Sequence[int], shape: Sequence[int]):
    idx = [np.arange(-t, t + 1) % m for t, m in zip(trunc, shape)]
    return np.ix_(*idx)


def wavenumbers(trunc: Sequence[int]) -> list[np.ndarray]:
    """Per-axis integer wavenumbers, each broadcastable over the centered mode array."""
    d = len(trunc)
    out = []
    for j, t in enumerate(trunc):
        shp = [1] * d
        shp[j] = 2 * t + 1
        out.append(np.arange(-t, t + 1).reshape(shp))
    return out


def l1_modulus(trunc: Sequence[int]) -> np.ndarray:
    """|k|_1 over the centered mode array."""
    ks = wavenumbers(trunc)
    total = np.zeros([2 * t + 1 for t in trunc], dtype=np.int64)
    for k in ks:
        total = total + np.abs(k)
    return total


def synthesize(coeffs: np.ndarray, shape: Sequence[int]) -> np.ndarray:
    """Evaluate stacked centered coefficients on a regular grid (real part)."""
    d = len(shape)
    trunc = tuple((s - 1) // 2 for s in coeffs.shape[-d:])
    check_margin(shape, trunc)
    full = np.zeros(coeffs.shape[:-d] + tuple(shape), dtype=complex)
    full[(Ellipsis,) + _mode_slots(trunc, shape)] = coeffs
    axes = tuple(range(-d, 0))
    vals = np.fft.ifftn(full, axes=axes) * float(np.prod(shape))
    return vals.real


def analyze(values: np.ndarray, trunc: Sequence[int], return_residual: bool = False):
    """Centered Fourier coefficients of real grid samples, cut at ``trunc``.

    With ``return_residual`` also returns the coefficient 1-norm of the
    discarded modes (one value per leading component).
    """
    d = len(trunc)
    shape = values.shape[-d:]
    check_margin(shape, trunc)
    axes = tuple(range(-d, 0))
    full = np.fft.fftn(values, axes=axes) / float(np.prod(shape))
    kept = full[(Ellipsis,) + _mode_slots(trunc, shape)]
    kept = hermitian_part(kept, d)
    if not return_residual:
        return kept
    total = np.abs(full).sum(axis=axes)
    resid = np.maximum(total - np.abs(kept).sum(axis=axes), 0.0)
    return kept, resid


def hermitian_part(coeffs: np.ndarray, d: int) -> np.ndarray:
    """Project onto coefficient arrays of real functions: c(-k) = conj c(k)."""
    axes = tuple(range(coeffs.ndim - d, coeffs.ndim))
    mirrored = np.conj(np.flip(coeffs, axis=axes))
    return 0.5 * (coeffs + mirrored)


def weights(trunc: Sequence[int], rho: float) -> np.ndarray:
    return np.exp(TWO_PI * rho * l1_modulus(trunc))


def grid_nodes(shape: Sequence[int]) -> list[np.ndarray]:
    """Mesh of node angles, one array per axis with the full grid shape."""
    axes = [np.arange(m) / m for m in shape]
    return list(np.meshgrid(*axes, indexing="ij"))


def resize_coeffs(coeffs: np.ndarray, old: Sequence[int], new: Sequence[int]) -> np.ndarray:
    """Zero-pad or cut a centered coefficient array to a new cutoff."""
    d = len(old)
    out = np.zeros(coeffs.shape[:-d] + tuple(2 * t + 1 for t in new), dtype=complex)
    src, dst = [], []
    for o, t in zip(old, new):
        m = min(o, t)
        src.append(slice(o - m, o + m + 1))
        dst.append(slice(t - m, t + m + 1))
    out[(Ellipsis,) + tuple(dst)] = coeffs[(Ellipsis,) + tuple(src)]
    return out


# ---------------------------------------------------------------------------
# public value types


@dataclass(frozen=True, eq=False)
class FourierSeries:
    """Scalar real trigonometric polynomial on T^n x T^ell."""

    dims: TorusDims
    trunc: tuple[int, ...]
    coeffs: np.ndarray

    def __post_init__(self):
        trunc = as_trunc(self.trunc, self.dims)
        object.__setattr__(self, "trunc", trunc)
        c = np.array(self.coeffs, dtype=complex)
        expected = tuple(2 * t + 1 for t in trunc)
        if c.shape != expected:
            raise ShapeError(f"coefficient array {c.shape} does not match cutoff {trunc}")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, dims: TorusDims, trunc) -> "FourierSeries":
        trunc = as_trunc(trunc, dims)
        return cls(dims, trunc, np.zeros([2 * t + 1 for t in trunc], dtype=complex))

    @classmethod
    def constant(cls, dims: TorusDims, trunc, value: float) -> "FourierSeries":
        s = cls.zeros(dims, trunc)
        c = s.coeffs.copy()
        c[s.trunc] = value
        return cls(dims, s.trunc, c)

    @classmethod
    def from_modes(cls, dims: TorusDims, trunc, modes: dict) -> "FourierSeries":
        """Build from ``{k: amplitude}``; the Hermitian partners are added here."""
        s = cls.zeros(dims, trunc)
        c = s.coeffs.copy()
        for k, a in modes.items():
            k = tuple(int(x) for x in k)
            pos = tuple(kj + t for kj, t in zip(k, s.trunc))
            neg = tuple(-kj + t for kj, t in zip(k, s.trunc))
            if any(abs(kj) > t for kj, t in zip(k, s.trunc)):
                raise ShapeError(f"mode {k} outside cutoff {s.trunc}")
            c[pos] = a
            c[neg] = np.conj(a)
        return cls(dims, s.trunc, c)

    def coeff(self, k) -> complex:
        k = tuple(int(x) for x in k)
        if any(abs(kj) > t for kj, t in zip(k, self.trunc)):
            return 0j
        return complex(self.coeffs[tuple(kj + t for kj, t in zip(k, self.trunc))])

    def _check(self, other: "FourierSeries"):
        if other.dims != self.dims or other.trunc != self.trunc:
            raise ShapeError("series have different dims or cutoffs")

    def __add__(self, other):
        if isinstance(other, FourierSeries):
            self._check(other)
            return FourierSeries(self.dims, self.trunc, self.coeffs + other.coeffs)
        return self + FourierSeries.constant(self.dims, self.trunc, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-other)

    def __neg__(self):
        return FourierSeries(self.dims, self.trunc, -self.coeffs)

    def __mul__(self, scalar):
        if isinstance(scalar, FourierSeries):
            raise TypeError("use multiply() for products of series")
        return FourierSeries(self.dims, self.trunc, self.coeffs * float(scalar))

    __rmul__ = __mul__

    def resized(self, trunc) -> "FourierSeries":
        trunc = as_trunc(trunc, self.dims)
        return FourierSeries(self.dims, trunc, resize_coeffs(self.coeffs, self.trunc, trunc))


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Samples of a real function on the regular grid of T^n x T^ell."""

    dims: TorusDims
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != self.dims.d:
            raise ShapeError(f"grid of rank {v.ndim} for d={self.dims.d}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @classmethod
    def sample(cls, dims: TorusDims, shape, func) -> "GridFunction":
        """Sample ``func(*angles)`` (vectorized) on the grid."""
        shape = as_shape(shape, dims)
        return cls(dims, func(*grid_nodes(shape)))


@dataclass(frozen=True, eq=False)
class MatrixSeries:
    """Matrix-valued real Fourier series stored as one ``(rows, cols, *modes)`` array."""

    dims: TorusDims
    trunc: tuple[int, ...]
    coeffs: np.ndarray

    def __post_init__(self):
        trunc = as_trunc(self.trunc, self.dims)
        object.__setattr__(self, "trunc", trunc)
        c = np.array(self.coeffs, dtype=complex)
        if c.ndim != 2 + self.dims.d or c.shape[2:] != tuple(2 * t + 1 for t in trunc):
            raise ShapeError(f"matrix coefficient array {c.shape} does not match cutoff {trunc}")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def shape(self) -> tuple[int, int]:
        return self.coeffs.shape[:2]

    def __getitem__(self, ij) -> FourierSeries:
        i, j = ij
        return FourierSeries(self.dims, self.trunc, self.coeffs[i, j])

    @property
    def T(self) -> "MatrixSeries":
        return MatrixSeries(self.dims, self.trunc, np.swapaxes(self.coeffs, 0, 1))

    @classmethod
    def from_grid(cls, dims: TorusDims, values: np.ndarray, trunc) -> "MatrixSeries":
        """Truncate nodewise matrix data ``(rows, cols, *grid)``."""
        trunc = as_trunc(trunc, dims)
        return cls(dims, trunc, analyze(values, trunc))

    def on_grid(self, shape) -> np.ndarray:
        return synthesize(self.coeffs, as_shape(shape, self.dims))

    def average(self) -> np.ndarray:
        return self.coeffs[(slice(None), slice(None)) + self.trunc].real.copy()

    def __sub__(self, other: "MatrixSeries") -> "MatrixSeries":
        return MatrixSeries(self.dims, self.trunc, self.coeffs - other.coeffs)


# ---------------------------------------------------------------------------
# operations


def forward_transform(grid: GridFunction, trunc) -> FourierSeries:
    trunc = as_trunc(trunc, grid.dims)
    return FourierSeries(grid.dims, trunc, analyze(grid.values, trunc))


def inverse_transform(series: FourierSeries, shape) -> GridFunction:
    shape = as_shape(shape, series.dims)
    return GridFunction(series.dims, synthesize(series.coeffs, shape))


def evaluate(series: FourierSeries, point) -> float:
    """Direct summation of the series at one point (slow reference path)."""
    x = np.asarray(point, dtype=float)
    if x.shape != (series.dims.d,):
        raise ShapeError(f"point must have {series.dims.d} angles")
    phase = np.zeros(series.coeffs.shape)
    for k, xj in zip(wavenumbers(series.trunc), x):
        phase = phase + k * xj
    value = np.sum(series.coeffs * np.exp(1j * TWO_PI * phase))
    scale = max(1.0, float(np.abs(series.coeffs).sum()))
    if abs(value.imag) > _IMAG_FAIL * scale:
        raise SymmetryError(f"imaginary residual {abs(value.imag):.3e} at {x.tolist()}")
    return float(value.real)


def derivative(series: FourierSeries, axis: int) -> FourierSeries:
    if not 0 <= axis < series.dims.d:
        raise ShapeError(f"axis {axis} out of range for d={series.dims.d}")
    k = wavenumbers(series.trunc)[axis]
    return FourierSeries(series.dims, series.trunc, series.coeffs * (1j * TWO_PI * k))


def average(series: FourierSeries) -> float:
    return float(series.coeffs[series.trunc].real)


def analytic_norm(series: FourierSeries, rho: float) -> float:
    """Exponentially weighted coefficient 1-norm; dominates the sup norm on the strip."""
    if rho < 0:
        raise ValueError(f"rho must be nonnegative, got {rho}")
    return float(np.sum(np.abs(series.coeffs) * weights(series.trunc, rho)))


def derivative_norm_bound(series: FourierSeries, rho: float, delta: float) -> float:
    """Cauchy-type bound for ``analytic_norm(derivative(s, j), rho - delta)``, any axis j."""
    if not 0 < delta <= rho:
        raise ValueError("need 0 < delta <= rho")
    return analytic_norm(series, rho) / delta


def grid_sup_norm(grid: GridFunction) -> float:
    return float(np.max(np.abs(grid.values))) if grid.values.size else 0.0


def multiply(a: FourierSeries, b: FourierSeries, shape=None) -> FourierSeries:
    """Product of two series computed on a grid and cut back to ``a.trunc``."""
    a._check(b)
    shape = as_shape(shape, a.dims) if shape is not None else default_shape(a.trunc)
    prod = synthesize(a.coeffs, shape) * synthesize(b.coeffs, shape)
    return FourierSeries(a.dims, a.trunc, analyze(prod, a.trunc))


def array_norm(coeffs: np.ndarray, trunc: Sequence[int], rho: float) -> np.ndarray:
    """Weighted 1-norm of each stacked component (leading axes kept)."""
    d = len(trunc)
    w = weights(trunc, rho)
    return np.sum(np.abs(coeffs) * w, axis=tuple(range(-d, 0)))


def matrix_norm(m: MatrixSeries, rho: float) -> float:
    """Max row sum of entrywise analytic norms."""
    entry = array_norm(m.coeffs, m.trunc, rho)
    return float(np.max(entry.sum(axis=1)))


def vector_norm(coeffs: np.ndarray, trunc: Sequence[int], rho: float) -> float:
    """Sup over components of the analytic norm, for a stack ``(r, *modes)``."""
    return float(np.max(array_norm(coeffs, trunc, rho)))


# ---------------------------------------------------------------------------
# coefficient files


def _lex_positive(k: Sequence[int]) -> bool:
    for kj in k:
        if kj != 0:
            return kj > 0
    return True


def write_coefficients(series: FourierSeries, path) -> None:
    """Write the half-space of coefficients; the Hermitian partners are implied."""
    lines = [f"dims {series.dims.n} {series.dims.ell}", "trunc " + " ".join(map(str, series.trunc))]
    ranges = [range(-t, t + 1) for t in series.trunc]
    for k in itertools.product(*ranges):
        if not _lex_positive(k):
            continue
        c = series.coeff(k)
        lines.append(" ".join(map(str, k)) + f" {float(c.real)!r} {float(c.imag)!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_coefficients(path) -> FourierSeries:
    text = Path(path).read_text().split("\n")
    rows = [ln.split() for ln in text if ln.strip()]
    if len(rows) < 2 or rows[0][0] != "dims" or rows[1][0] != "trunc":
        raise ValueError(f"{path}: missing dims/trunc header")
    dims = TorusDims(int(rows[0][1]), int(rows[0][2]))
    trunc = as_trunc([int(x) for x in rows[1][1:]], dims)
    s = FourierSeries.zeros(dims, trunc)
    c = s.coeffs.copy()
    for row in rows[2:]:
        if len(row) != dims.d + 2:
            raise ValueError(f"{path}: malformed line {' '.join(row)!r}")
        k = tuple(int(x) for x in row[: dims.d])
        if any(abs(kj) > t for kj, t in zip(k, trunc)) or not _lex_positive(k):
            raise ValueError(f"{path}: index {k} outside the stored half-space")
        a = complex(float(row[-2]), float(row[-1]))
        c[tuple(kj + t for kj, t in zip(k, trunc))] = a
        c[tuple(-kj + t for kj, t in zip(k, trunc))] = np.conj(a)
    center = tuple(trunc)
    c[center] = c[center].real
    return FourierSeries(dims, trunc, c)


def iter_series(components: Iterable[np.ndarray], dims: TorusDims, trunc) -> list[FourierSeries]:
    return [FourierSeries(dims, trunc, c) for c in components]


@dataclass(frozen=True, eq=False)
class VectorSeries:
    """Stack of ``r`` real Fourier series sharing dims and cutoff, array ``(r, *modes)``."""

    dims: TorusDims
    trunc: tuple[int, ...]
    coeffs: np.ndarray

    def __post_init__(self):
        trunc = as_trunc(self.trunc, self.dims)
        object.__setattr__(self, "trunc", trunc)
        c = np.array(self.coeffs, dtype=complex)
        if c.ndim != 1 + self.dims.d or c.shape[1:] != tuple(2 * t + 1 for t in trunc):
            raise ShapeError(f"vector coefficient array {c.shape} does not match cutoff {trunc}")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    def __len__(self) -> int:
        return self.coeffs.shape[0]

    def __getitem__(self, i) -> FourierSeries:
        return FourierSeries(self.dims, self.trunc, self.coeffs[i])

    @property
    def components(self) -> list[FourierSeries]:
        return [self[i] for i in range(len(self))]

    @classmethod
    def from_components(cls, parts: Sequence[FourierSeries]) -> "VectorSeries":
        first = parts[0]
        for p in parts[1:]:
            first._check(p)
        return cls(first.dims, first.trunc, np.stack([p.coeffs for p in parts]))

    @classmethod
    def from_grid(cls, dims: TorusDims, values: np.ndarray, trunc) -> "VectorSeries":
        trunc = as_trunc(trunc, dims)
        return cls(dims, trunc, analyze(values, trunc))

    def on_grid(self, shape) -> np.ndarray:
        return synthesize(self.coeffs, as_shape(shape, self.dims))

    def average(self) -> np.ndarray:
        return self.coeffs[(slice(None),) + self.trunc].real.copy()

    def norm(self, rho: float) -> float:
        return vector_norm(self.coeffs, self.trunc, rho)

    def sup_norm(self, shape=None) -> float:
        shape = default_shape(self.trunc) if shape is None else shape
        return float(np.max(np.abs(self.on_grid(shape))))

    def coefficient_distance(self, other: "VectorSeries") -> float:
        return float(np.max(np.abs(self.coeffs - other.coeffs)))

    def __add__(self, other: "VectorSeries") -> "VectorSeries":
        return VectorSeries(self.dims, self.trunc, self.coeffs + other.coeffs)

    def __sub__(self, other: "VectorSeries") -> "VectorSeries":
        return VectorSeries(self.dims, self.trunc, self.coeffs - other.coeffs)


@dataclass(frozen=True, eq=False)
class GridMatrix:
    """Nodewise matrix field ``(rows, cols, *grid)``; no truncation applied."""

    dims: TorusDims
    values: np.ndarray

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape[2:]

    def to_series(self, trunc) -> MatrixSeries:
        return MatrixSeries.from_grid(self.dims, self.values, trunc)

    def sup_norm(self) -> float:
        return float(np.max(np.sum(np.abs(self.values), axis=1)))

    def average(self) -> np.ndarray:
        return self.values.mean(axis=tuple(range(2, self.values.ndim)))


def to_points(values: np.ndarray, ncomp: int) -> np.ndarray:
    """``(*comp, *grid)`` -> ``(points, *comp)`` for batched linear algebra."""
    comp = values.shape[:ncomp]
    flat = values.reshape(comp + (-1,))
    return np.moveaxis(flat, -1, 0)


def from_points(arr: np.ndarray, shape: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`to_points`."""
    moved = np.moveaxis(arr, 0, -1)
    return moved.reshape(moved.shape[:-1] + tuple(shape))
