"""Symplectic structures, torus embeddings and the adapted frame.

All matrix products and inversions are carried out node by node on a regular
grid; the resulting fields are then truncated to the working cutoff.  The
nodewise arrays are kept alongside the truncated series so that the Newton
step never multiplies truncated approximations of inverses.

Array conventions: nodewise fields are point-major, ``(P, rows, cols)``; the
first derivative of a matrix field carries the differentiation direction as the
last axis, ``dM[p, i, j, l] = d M_ij / d z_l``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import cohomology
from .errors import DegenerateFrameError, ShapeError, TwistDegeneracyError
from .fourier import (
    GridMatrix,
    MatrixSeries,
    TorusDims,
    VectorSeries,
    analyze,
    as_shape,
    as_trunc,
    default_shape,
    from_points,
    grid_nodes,
    synthesize,
    to_points,
    wavenumbers,
    TWO_PI,
)

CANONICAL = "canonical"
CASE_II = "case2"
CASE_III = "case3"
CASES = (CANONICAL, CASE_III, CASE_II)

FRAME_CONDITION_LIMIT = 1e12
TWIST_CONDITION_LIMIT = 1e12
ANTI_INVOLUTION_TOL = 1e-10


def darboux(n: int) -> np.ndarray:
    """Omega_0 = [[0, -I], [I, 0]]."""
    eye = np.eye(n)
    zero = np.zeros((n, n))
    return np.block([[zero, -eye], [eye, zero]])


def _const(mat: np.ndarray):
    def fn(z):
        return np.broadcast_to(mat, (z.shape[0],) + mat.shape).astype(np.result_type(z, mat))

    return fn


def _zero_tensor(shape):
    def fn(z):
        return np.zeros((z.shape[0],) + shape, dtype=np.result_type(z, float))

    return fn


@dataclass(frozen=True, eq=False)
class SymplecticStructure:
    """Matrix representations of the symplectic form and the metric.

    ``omega_fn``/``g_fn`` map points ``(P, 2n)`` to ``(P, 2n, 2n)``; the
    optional derivative callables add one (or two) trailing direction axes.
    Missing derivatives mean the object is constant.  ``J = -Omega^{-1} G`` and
    its derivative are derived from these.
    """

    n: int
    case_tag: str
    omega_fn: Callable
    g_fn: Callable
    domega_fn: Optional[Callable] = None
    dg_fn: Optional[Callable] = None
    d2omega_fn: Optional[Callable] = None
    d2g_fn: Optional[Callable] = None

    def __post_init__(self):
        if self.case_tag not in CASES:
            raise ValueError(f"unknown structure case {self.case_tag!r}; expected one of {CASES}")

    @property
    def dim(self) -> int:
        return 2 * self.n

    @property
    def constant(self) -> bool:
        return self.domega_fn is None and self.dg_fn is None

    def omega(self, z):
        return self.omega_fn(z)

    def g(self, z):
        return self.g_fn(z)

    def domega(self, z):
        m = self.dim
        return (self.domega_fn or _zero_tensor((m, m, m)))(z)

    def dg(self, z):
        m = self.dim
        return (self.dg_fn or _zero_tensor((m, m, m)))(z)

    def d2omega(self, z):
        m = self.dim
        return (self.d2omega_fn or _zero_tensor((m, m, m, m)))(z)

    def d2g(self, z):
        m = self.dim
        return (self.d2g_fn or _zero_tensor((m, m, m, m)))(z)

    def j(self, z):
        return -np.linalg.solve(self.omega(z), self.g(z))

    def j_inv(self, z):
        return -np.linalg.solve(self.g(z), self.omega(z))

    def dj(self, z):
        """Directional derivatives of J: ``dJ[p, :, :, l] = Omega^{-1} dOmega_l Omega^{-1} G - Omega^{-1} dG_l``."""
        if self.constant:
            m = self.dim
            return np.zeros((z.shape[0], m, m, m), dtype=np.result_type(z, float))
        om = self.omega(z)
        g = self.g(z)
        dom = np.moveaxis(self.domega(z), -1, 1)  # (P, l, i, j)
        dgm = np.moveaxis(self.dg(z), -1, 1)
        om_b = om[:, None]
        inv_g = np.linalg.solve(om, g)[:, None]
        term = np.linalg.solve(om_b, dom @ inv_g) - np.linalg.solve(om_b, dgm)
        return np.moveaxis(term, 1, -1)

    def anti_involution_residual(self, z) -> float:
        j = self.j(z)
        eye = np.eye(self.dim)
        return float(np.max(np.abs(j @ j + eye)))


def canonical(n: int) -> SymplecticStructure:
    om = darboux(n)
    return SymplecticStructure(n, CANONICAL, _const(om), _const(np.eye(2 * n)))


def constant_structure(omega: np.ndarray, g: np.ndarray, case_tag: str) -> SymplecticStructure:
    """Constant Omega and G; the case tag decides which frame/torsion branch applies."""
    omega = np.asarray(omega, dtype=float)
    g = np.asarray(g, dtype=float)
    m = omega.shape[0]
    if m % 2 or omega.shape != (m, m) or g.shape != (m, m):
        raise ShapeError("Omega and G must be square of even size")
    if not np.allclose(omega, -omega.T, atol=1e-14):
        raise ValueError("Omega is not antisymmetric")
    if not np.allclose(g, g.T, atol=1e-14) or np.any(np.linalg.eigvalsh(g) <= 0):
        raise ValueError("G is not symmetric positive definite")
    s = SymplecticStructure(m // 2, case_tag, _const(omega), _const(g))
    if case_tag in (CASE_III, CANONICAL):
        res = s.anti_involution_residual(np.zeros((1, m)))
        if res > ANTI_INVOLUTION_TOL:
            raise ValueError(f"J^2 + I residual {res:.2e}: not a Case III structure")
    return s


def conformal_structure(amplitude: float = 0.2) -> SymplecticStructure:
    """Planar example Omega(z) = s(x) Omega_0 with s(x) = 1 + a sin(2 pi x), G = I.

    Every planar 2-form is closed, and this one is exact on the cylinder.
    J = Omega_0 / s so J^2 = -I / s^2: a genuine Case II structure.
    """
    if not abs(amplitude) < 1:
        raise ValueError("|amplitude| must be below 1 to keep Omega nondegenerate")
    om0 = darboux(1)
    a = float(amplitude)

    def scale(z):
        return 1.0 + a * np.sin(TWO_PI * z[:, 0])

    def omega_fn(z):
        return scale(z)[:, None, None] * om0

    def domega_fn(z):
        out = np.zeros((z.shape[0], 2, 2, 2), dtype=np.result_type(z, float))
        out[..., 0] = (a * TWO_PI * np.cos(TWO_PI * z[:, 0]))[:, None, None] * om0
        return out

    def d2omega_fn(z):
        out = np.zeros((z.shape[0], 2, 2, 2, 2), dtype=np.result_type(z, float))
        out[..., 0, 0] = (-a * TWO_PI**2 * np.sin(TWO_PI * z[:, 0]))[:, None, None] * om0
        return out

    return SymplecticStructure(
        1, CASE_II, omega_fn, _const(np.eye(2)), domega_fn=domega_fn, d2omega_fn=d2omega_fn
    )


# ---------------------------------------------------------------------------
# embeddings


@dataclass(frozen=True, eq=False)
class TorusEmbedding:
    """K(theta, phi) = W theta + periodic(theta, phi).

    ``winding`` is the integer ``2n x n`` matrix of the lift; angle-valued
    phase coordinates wind once around their circle along the matching
    internal angle.  The default ``[I; 0]`` is the primary torus in
    ``T^n x R^n``.
    """

    periodic: VectorSeries
    winding: np.ndarray = None

    def __post_init__(self):
        n = self.periodic.dims.n
        if len(self.periodic) != 2 * n:
            raise ShapeError(f"embedding needs 2n={2 * n} components, got {len(self.periodic)}")
        w = self.winding
        if w is None:
            w = np.vstack([np.eye(n), np.zeros((n, n))])
        w = np.array(w, dtype=float)
        if w.shape != (2 * n, n):
            raise ShapeError("winding matrix must be 2n x n")
        w.setflags(write=False)
        object.__setattr__(self, "winding", w)

    @property
    def dims(self) -> TorusDims:
        return self.periodic.dims

    @property
    def trunc(self) -> tuple[int, ...]:
        return self.periodic.trunc

    @property
    def components(self):
        return self.periodic.components

    @classmethod
    def rotator(cls, dims: TorusDims, trunc, actions, winding=None) -> "TorusEmbedding":
        """Flat torus: periodic part zero in the angle slots, constant ``actions``."""
        trunc = as_trunc(trunc, dims)
        n = dims.n
        c = np.zeros((2 * n,) + tuple(2 * t + 1 for t in trunc), dtype=complex)
        c[(slice(n, 2 * n),) + trunc] = np.atleast_1d(actions)
        return cls(VectorSeries(dims, trunc, c), winding)

    def with_periodic(self, coeffs: np.ndarray) -> "TorusEmbedding":
        return TorusEmbedding(VectorSeries(self.dims, self.trunc, coeffs), self.winding)

    def on_grid(self, shape) -> np.ndarray:
        """Nodal values ``(2n, *grid)`` including the linear part."""
        shape = as_shape(shape, self.dims)
        vals = self.periodic.on_grid(shape)
        nodes = grid_nodes(shape)
        for j in range(self.dims.n):
            vals = vals + self.winding[:, j].reshape((-1,) + (1,) * len(shape)) * nodes[j]
        return vals

    def at(self, points: np.ndarray) -> np.ndarray:
        """Direct-summation values at arbitrary angles ``(P, d)`` -> ``(P, 2n)``."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        ks = [k.ravel() for k in np.meshgrid(*[np.arange(-t, t + 1) for t in self.trunc], indexing="ij")]
        kmat = np.stack(ks, axis=1)  # (modes, d)
        phases = np.exp(1j * TWO_PI * (points @ kmat.T))  # (P, modes)
        flat = self.periodic.coeffs.reshape(len(self.periodic), -1)
        vals = (phases @ flat.T).real
        return vals + points[:, : self.dims.n] @ self.winding.T

    def tangent_coeffs(self) -> np.ndarray:
        """Coefficients of D_theta K, shape ``(2n, n, *modes)``."""
        ks = wavenumbers(self.trunc)
        n = self.dims.n
        out = np.stack([self.periodic.coeffs * (1j * TWO_PI * ks[j]) for j in range(n)], axis=1)
        out[(slice(None), slice(None)) + self.trunc] += self.winding
        return out

    def lie_coeffs(self, freqs) -> np.ndarray:
        """Coefficients of L_{omega,alpha} K, including the constant -W omega."""
        out = cohomology.lie_coeffs(self.periodic.coeffs, self.trunc, freqs.nu).copy()
        out[(slice(None),) + self.trunc] -= self.winding @ freqs.omega
        return out


# ---------------------------------------------------------------------------
# adapted frame


@dataclass(frozen=True, eq=False)
class AdaptedFrame:
    """The frame P = [L N] and its building blocks, truncated and nodal.

    Torsion fields are filled in by :func:`torsion`.
    """

    case_tag: str
    shape: tuple[int, ...]
    L: MatrixSeries
    N0: MatrixSeries
    B: MatrixSeries
    A: MatrixSeries
    Ntilde: MatrixSeries
    N: MatrixSeries
    P: MatrixSeries
    OmegaL: MatrixSeries
    nodal: dict = field(repr=False)
    T: Optional[MatrixSeries] = None
    avgT: Optional[np.ndarray] = None
    avgT_inverse: Optional[np.ndarray] = None
    avgT_condition: Optional[float] = None
    max_frame_condition: float = 1.0

    @property
    def n(self) -> int:
        return self.L.shape[1]


def tangent_frame(K: TorusEmbedding) -> MatrixSeries:
    return MatrixSeries(K.dims, K.trunc, K.tangent_coeffs())


def _grid_angles(dims: TorusDims, shape, flat_index: int) -> tuple[float, ...]:
    pos = np.unravel_index(flat_index, shape)
    return tuple(float(p) / m for p, m in zip(pos, shape))


def reduced_form(K: TorusEmbedding, L: MatrixSeries, structure: SymplecticStructure, shape=None) -> MatrixSeries:
    """Omega_L = L^T Omega(K) L, nodewise then truncated."""
    shape = as_shape(shape if shape is not None else default_shape(K.trunc), K.dims)
    z = to_points(K.on_grid(shape), 1)
    lp = to_points(L.on_grid(shape), 2)
    ol = np.swapaxes(lp, 1, 2) @ structure.omega(z) @ lp
    return MatrixSeries(K.dims, K.trunc, analyze(from_points(ol, shape), K.trunc))


def build_frame(K: TorusEmbedding, structure: SymplecticStructure, shape=None) -> AdaptedFrame:
    """Adapted frame following the N0 = J L, B = (L^T G L)^{-1} recipe."""
    dims = K.dims
    n = dims.n
    if structure.n != n:
        raise ShapeError(f"structure is for n={structure.n}, embedding has n={n}")
    shape = as_shape(shape if shape is not None else default_shape(K.trunc), dims)
    trunc = K.trunc
    z = to_points(K.on_grid(shape), 1)
    L_series = tangent_frame(K)
    lp = to_points(L_series.on_grid(shape), 2)
    om = structure.omega(z)
    g = structure.g(z)
    jm = structure.j(z)
    if structure.case_tag != CASE_II:
        res = float(np.max(np.abs(jm @ jm + np.eye(2 * n))))
        if res > ANTI_INVOLUTION_TOL:
            raise ValueError(f"J^2 + I residual {res:.2e} on the torus: structure is not Case III")
    lt = np.swapaxes(lp, 1, 2)
    gl = lt @ g @ lp
    cond = np.linalg.cond(gl)
    worst = int(np.argmax(cond))
    if not np.isfinite(cond[worst]) or cond[worst] > FRAME_CONDITION_LIMIT:
        node = _grid_angles(dims, shape, worst)
        raise DegenerateFrameError(
            f"L^T G L has condition {cond[worst]:.3e} at node {node}", node=node, condition=float(cond[worst])
        )
    b = np.linalg.inv(gl)
    b = 0.5 * (b + np.swapaxes(b, 1, 2))
    n0 = jm @ lp
    nt = n0 @ b
    ntt = np.swapaxes(nt, 1, 2)
    if structure.case_tag == CASE_II:
        a = -0.5 * (ntt @ om @ nt)
    else:
        a = np.zeros_like(b)
    nn = lp @ a + nt
    pp = np.concatenate([lp, nn], axis=2)
    ol = lt @ om @ lp

    nodal = {"z": z, "L": lp, "Omega": om, "G": g, "J": jm, "N0": n0, "B": b, "A": a,
             "Ntilde": nt, "N": nn, "P": pp, "OmegaL": ol}

    def cut(arr):
        return MatrixSeries(dims, trunc, analyze(from_points(arr, shape), trunc))

    return AdaptedFrame(
        case_tag=structure.case_tag,
        shape=shape,
        L=L_series,
        N0=cut(n0),
        B=cut(b),
        A=cut(a),
        Ntilde=cut(nt),
        N=cut(nn),
        P=cut(pp),
        OmegaL=cut(ol),
        nodal=nodal,
        max_frame_condition=float(cond[worst]),
    )


def symplectic_error(frame: AdaptedFrame, structure: SymplecticStructure = None, K: TorusEmbedding = None) -> GridMatrix:
    """E_sym = P^T Omega(K) P - Omega_0 at the grid nodes.

    ``structure`` and ``K`` are accepted for interface symmetry; the frame
    already carries Omega(K) at its nodes.
    """
    pp = frame.nodal["P"]
    om = frame.nodal["Omega"] if structure is None or K is None else structure.omega(
        to_points(K.on_grid(frame.shape), 1)
    )
    es = np.swapaxes(pp, 1, 2) @ om @ pp - darboux(frame.n)
    return GridMatrix(frame.L.dims, from_points(es, frame.shape))


def symplectic_error_blocks(frame: AdaptedFrame) -> GridMatrix:
    """Block expression of E_sym in terms of Omega_L, A and B."""
    ol = frame.nodal["OmegaL"]
    a = frame.nodal["A"]
    at = np.swapaxes(a, 1, 2)
    if frame.case_tag == CASE_II:
        top = np.concatenate([ol, ol @ a], axis=2)
        bottom = np.concatenate([at @ ol, at @ ol @ a], axis=2)
    else:
        b = frame.nodal["B"]
        zero = np.zeros_like(ol)
        top = np.concatenate([ol, zero], axis=2)
        bottom = np.concatenate([zero, np.swapaxes(b, 1, 2) @ ol @ b], axis=2)
    blocks = np.concatenate([top, bottom], axis=1)
    return GridMatrix(frame.L.dims, from_points(blocks, frame.shape))


# ---------------------------------------------------------------------------
# torsion


def th_kernel_points(z, phi, structure: SymplecticStructure, system, case_tag=None) -> np.ndarray:
    """T_h(z, phi) at a batch of points, ``(P, 2n, 2n)``."""
    case_tag = case_tag or structure.case_tag
    om = structure.omega(z)
    dz = system.field_jacobian(z, phi)
    jm = structure.j(z)
    if structure.constant:
        djz = np.zeros_like(dz)
    else:
        zf = system.vector_field(z, phi)
        djz = np.einsum("pijl,pl->pij", structure.dj(z), zf)
    if case_tag == CASE_II:
        jinv = structure.j_inv(z)
        inner = dz - djz @ jinv - jm @ dz @ jinv
    else:
        inner = dz + djz @ jm + jm @ dz @ jm
    return om @ inner


def torsion_kernel_Th(K: TorusEmbedding, structure: SymplecticStructure, system, shape=None) -> GridMatrix:
    """T_h evaluated along the torus at the grid nodes."""
    shape = as_shape(shape if shape is not None else default_shape(K.trunc), K.dims)
    z = to_points(K.on_grid(shape), 1)
    phi = _phi_points(K.dims, shape)
    th = th_kernel_points(z, phi, structure, system)
    return GridMatrix(K.dims, from_points(th, shape))


def symmetry_residual(m: GridMatrix) -> float:
    return float(np.max(np.abs(m.values - np.swapaxes(m.values, 0, 1))))


def _phi_points(dims: TorusDims, shape) -> np.ndarray:
    nodes = grid_nodes(shape)
    return np.stack([nodes[dims.n + j].ravel() for j in range(dims.ell)], axis=1)


def _torsion_nodal(frame: AdaptedFrame, th: np.ndarray, case_tag: str) -> np.ndarray:
    nn = frame.nodal["N"]
    nnt = np.swapaxes(nn, 1, 2)
    if case_tag == CASE_II:
        nt = frame.nodal["Ntilde"]
        ntt = np.swapaxes(nt, 1, 2)
        tht = np.swapaxes(th, 1, 2)
        return -0.5 * ntt @ (th + tht) @ nt + ntt @ tht @ nn + nnt @ th @ nt
    return nnt @ th @ nn


def torsion(frame: AdaptedFrame, th: GridMatrix, case_tag: str = None) -> AdaptedFrame:
    """Derivative-free torsion; returns the frame with T, <T> and <T>^{-1} filled in."""
    case_tag = case_tag or frame.case_tag
    if th.shape != frame.shape:
        raise ShapeError(f"kernel grid {th.shape} differs from frame grid {frame.shape}")
    tp = _torsion_nodal(frame, to_points(th.values, 2), case_tag)
    dims = frame.L.dims
    t_series = MatrixSeries(dims, frame.L.trunc, analyze(from_points(tp, frame.shape), frame.L.trunc))
    avg = tp.mean(axis=0)
    cond = float(np.linalg.cond(avg))
    if not np.isfinite(cond) or cond > TWIST_CONDITION_LIMIT:
        raise TwistDegeneracyError(f"<T> is singular (condition {cond:.3e})", condition=cond)
    nodal = dict(frame.nodal)
    nodal["T"] = tp
    return replace(
        frame,
        T=t_series,
        avgT=avg,
        avgT_inverse=np.linalg.inv(avg),
        avgT_condition=cond,
        nodal=nodal,
    )


def torsion_alternative(frame: AdaptedFrame, th: GridMatrix) -> GridMatrix:
    """Case II torsion variant written with N and L A only.

    Kept as a cross-check.  It coincides with :func:`torsion` where A = 0; for
    A != 0 the two differ by ``M^T (3/2 T_h^T - 1/2 T_h) N + N^T sym(T_h) M``
    with ``M = L A``, which the tests verify.
    """
    tp = to_points(th.values, 2)
    tpt = np.swapaxes(tp, 1, 2)
    sym = 0.5 * (tp + tpt)
    nn = frame.nodal["N"]
    la = frame.nodal["L"] @ frame.nodal["A"]
    nnt = np.swapaxes(nn, 1, 2)
    lat = np.swapaxes(la, 1, 2)
    out = nnt @ sym @ nn + lat @ tpt @ nn + nnt @ tpt @ la - lat @ sym @ la
    return GridMatrix(frame.L.dims, from_points(out, frame.shape))


def torsion_via_lie(frame: AdaptedFrame, K: TorusEmbedding, system, freqs, structure=None) -> GridMatrix:
    """Reference torsion N^T Omega(K) (D_z Z_H N + L_{omega,alpha} N) on the grid."""
    structure = structure or system.structure
    shape = frame.shape
    z = to_points(K.on_grid(shape), 1)
    phi = _phi_points(K.dims, shape)
    n_series = frame.N
    nn = to_points(n_series.on_grid(shape), 2)
    lie_n = to_points(synthesize(cohomology.lie_coeffs(n_series.coeffs, n_series.trunc, freqs.nu), shape), 2)
    dz = system.field_jacobian(z, phi)
    om = structure.omega(z)
    out = np.swapaxes(nn, 1, 2) @ om @ (dz @ nn + lie_n)
    return GridMatrix(K.dims, from_points(out, shape))


def nodal_torsion(frame: AdaptedFrame) -> GridMatrix:
    if frame.T is None:
        raise ValueError("frame has no torsion yet")
    return GridMatrix(frame.L.dims, from_points(frame.nodal["T"], frame.shape))


# ---------------------------------------------------------------------------
# embedding files

EMBEDDING_INDEX = "embedding.txt"


def write_embedding(K: TorusEmbedding, directory, stem: str = "K") -> list:
    """One coefficient file per component plus an index with the winding matrix."""
    from pathlib import Path

    from .fourier import write_coefficients

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = []
    for i, comp in enumerate(K.components):
        name = f"{stem}_{i}.coef"
        write_coefficients(comp, directory / name)
        names.append(name)
    lines = [f"components {len(names)}"] + [f"file {nm}" for nm in names]
    for row in K.winding:
        lines.append("winding " + " ".join(str(int(round(x))) for x in row))
    (directory / EMBEDDING_INDEX).write_text("\n".join(lines) + "\n")
    return names + [EMBEDDING_INDEX]


def read_embedding(directory) -> TorusEmbedding:
    from pathlib import Path

    from .errors import ConfigError
    from .fourier import read_coefficients

    directory = Path(directory)
    index = directory / EMBEDDING_INDEX if directory.is_dir() else directory
    base = index.parent
    try:
        rows = [ln.split() for ln in index.read_text().splitlines() if ln.strip()]
        files = [r[1] for r in rows if r[0] == "file"]
        winding = [[float(x) for x in r[1:]] for r in rows if r[0] == "winding"]
        parts = [read_coefficients(base / f) for f in files]
        if not parts or int(rows[0][1]) != len(parts):
            raise ValueError("component count does not match the index")
        periodic = VectorSeries.from_components(parts)
        return TorusEmbedding(periodic, np.array(winding) if winding else None)
    except (OSError, ValueError, IndexError) as exc:
        raise ConfigError(f"cannot read embedding from {index}: {exc}") from exc
