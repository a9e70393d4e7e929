"""Hypothesis measurement, explicit KAM constants and the final KAM inequality.

Every bound taken from sampling is labelled "sampled, not rigorous": the
global H1 constants come from a lattice on the complexified domain and the
torus-local sigma's from weighted Fourier norms, each inflated by a safety
factor.  Nothing here is an interval-arithmetic proof.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import cohomology, geometry
from .errors import DomainError, HypothesisSlackError
from .fourier import TWO_PI, as_shape, default_shape, grid_nodes, matrix_norm, synthesize, wavenumbers

SAFETY = 1.05
SAMPLED = "sampled, not rigorous"
EXACT = "exact"
TORUS = "torus norm x 1.05"
MANIFEST_PATH = Path(__file__).with_name("constants_manifest.txt")

STRUCTURE_KEYS = (
    "c_Omega0", "c_Omega1", "c_G0", "c_G1", "c_G2", "c_J0", "c_J1", "c_J2",
    "c_JT0", "c_JT1", "c_Jinv", "c_JinvT",
)
FIELD_KEYS = ("c_H1", "c_Z0", "c_Z1", "c_Z2", "c_ZT1", "c_Th", "c_DTh", "c_ThT", "c_ThT1")


@dataclass
class HypothesisMeasurements:
    n: int
    ell: int
    case_tag: str
    # H1, structure
    c_Omega0: float
    c_Omega1: float
    c_G0: float
    c_G1: float
    c_G2: float
    c_J0: float
    c_J1: float
    c_J2: float
    c_JT0: float
    c_JT1: float
    c_Jinv: float
    c_JinvT: float
    # H1, field
    c_H1: float
    c_Z0: float
    c_Z1: float
    c_Z2: float
    c_ZT1: float
    c_Th: float
    c_DTh: float
    c_ThT: float
    c_ThT1: float
    # H2-H4 and the measured norms they bound
    sigma_L: float
    sigma_LT: float
    sigma_B: float
    sigma_T: float
    norm_DK: float
    norm_DKT: float
    norm_B: float
    avgT_inv: float
    dist: float
    # H5 and the strip
    gamma: float
    tau: float
    rho: float
    delta: float
    c_R: float
    gamma_requested: float = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        for k, v in asdict(self).items():
            if isinstance(v, float) and not math.isfinite(v):
                raise ValueError(f"measurement {k} is not finite")
        if self.gamma_requested is None:
            self.gamma_requested = self.gamma

    def replace(self, **kw) -> "HypothesisMeasurements":
        d = asdict(self)
        d.update(kw)
        return HypothesisMeasurements(**d)

    def check_strict(self) -> list:
        """Rows where a sigma bound does not strictly dominate its measured norm."""
        bad = []
        for s, m in (("sigma_L", "norm_DK"), ("sigma_LT", "norm_DKT"), ("sigma_B", "norm_B"), ("sigma_T", "avgT_inv")):
            if not getattr(self, s) > getattr(self, m):
                bad.append(s)
        return bad


# ---------------------------------------------------------------------------
# norms of sampled tensors


def _tensor_norm(samples: np.ndarray) -> float:
    """max_i sum_{j, l...} sup |M_{ij l...}| for samples of shape (P, i, j, l...)."""
    a = np.max(np.abs(samples), axis=0)
    a = a.reshape(a.shape[0], -1)
    return float(np.max(a.sum(axis=1)))


def _transpose_first(samples: np.ndarray) -> np.ndarray:
    return np.swapaxes(samples, 1, 2)


def _box_lattice(box, ell: int, m: int, imag_z: float, imag_phi: float) -> tuple[np.ndarray, np.ndarray]:
    axes = []
    for lo, hi in zip(box.lower, box.upper):
        if math.isinf(lo) or math.isinf(hi):
            re = np.arange(m) / m
        else:
            re = np.linspace(lo, hi, m)
        axes.append((re[:, None] + 1j * np.array([-imag_z, 0.0, imag_z])[None, :]).ravel())
    for _ in range(ell):
        re = np.arange(m) / m
        axes.append((re[:, None] + 1j * np.array([-imag_phi, 0.0, imag_phi])[None, :]).ravel())
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.ravel() for g in mesh], axis=1)
    dim = box.dim
    return pts[:, :dim], pts[:, dim:]


def _th_derivative(z, phi, structure, system, h=1e-6) -> np.ndarray:
    """D_z T_h, analytic for constant structures, centered differences otherwise."""
    m = z.shape[1]
    if structure.constant and system.third is not None:
        om = structure.omega(z)
        d2z = np.moveaxis(system.field_hessian(z, phi), -1, 1)  # (P, l, i, j)
        jm = structure.j(z)[:, None]
        if structure.case_tag == geometry.CASE_II:
            inner = d2z - jm @ d2z @ structure.j_inv(z)[:, None]
        else:
            inner = d2z + jm @ d2z @ jm
        return np.moveaxis(om[:, None] @ inner, 1, -1)
    cols = []
    for l in range(m):
        e = np.zeros(m)
        e[l] = h
        cols.append(
            (geometry.th_kernel_points(z + e, phi, structure, system) - geometry.th_kernel_points(z - e, phi, structure, system))
            / (2 * h)
        )
    return np.stack(cols, axis=-1)


def _global_values(system, z, phi) -> dict:
    st = system.structure
    out = {}
    om = st.omega(z)
    g = st.g(z)
    jm = st.j(z)
    out["c_Omega0"] = _tensor_norm(om)
    out["c_Omega1"] = _tensor_norm(st.domega(z))
    out["c_G0"] = _tensor_norm(g)
    out["c_G1"] = _tensor_norm(st.dg(z))
    out["c_G2"] = _tensor_norm(st.d2g(z))
    out["c_J0"] = _tensor_norm(jm)
    dj = st.dj(z)
    out["c_J1"] = _tensor_norm(dj)
    out["c_JT0"] = _tensor_norm(_transpose_first(jm))
    out["c_JT1"] = _tensor_norm(_transpose_first(dj))
    jinv = st.j_inv(z)
    out["c_Jinv"] = _tensor_norm(jinv)
    out["c_JinvT"] = _tensor_norm(_transpose_first(jinv))
    if st.constant:
        out["c_J2"] = 0.0
    else:
        h = 1e-5
        m = z.shape[1]
        cols = []
        for l in range(m):
            e = np.zeros(m)
            e[l] = h
            cols.append((st.dj(z + e) - st.dj(z - e)) / (2 * h))
        out["c_J2"] = _tensor_norm(np.stack(cols, axis=-1))
    grad = system.grad(z, phi)
    out["c_H1"] = _tensor_norm(grad[:, None, :])
    zf = system.vector_field(z, phi)
    out["c_Z0"] = _tensor_norm(zf[:, :, None])
    dz = system.field_jacobian(z, phi)
    out["c_Z1"] = _tensor_norm(dz)
    out["c_ZT1"] = _tensor_norm(dz[:, None, :, :].reshape(dz.shape[0], 1, -1))
    out["c_Z2"] = _tensor_norm(system.field_hessian(z, phi)) if system.third is not None else 0.0
    th = geometry.th_kernel_points(z, phi, st, system)
    out["c_Th"] = _tensor_norm(th)
    out["c_ThT"] = _tensor_norm(_transpose_first(th))
    dth = _th_derivative(z, phi, st, system)
    out["c_DTh"] = _tensor_norm(dth)
    out["c_ThT1"] = _tensor_norm(_transpose_first(dth))
    return out


def canonical_structure_bounds() -> dict:
    """Structure constants of the canonical case: Omega = J = Omega_0, G = I."""
    return {
        "c_Omega0": 1.0, "c_Omega1": 0.0, "c_G0": 1.0, "c_G1": 0.0, "c_G2": 0.0,
        "c_J0": 1.0, "c_J1": 0.0, "c_J2": 0.0, "c_JT0": 1.0, "c_JT1": 0.0,
        "c_Jinv": 1.0, "c_JinvT": 1.0,
    }


def sample_global_bounds(system, levels=(8, 16, 32), rel_tol: float = 0.01, imag_phi: float = None) -> tuple[dict, int]:
    """Lattice maxima over the complexified box, refined until stable to ``rel_tol``.

    Returns the raw (uninflated) maxima and the lattice size used.
    """
    box = system.box
    imag_phi = box.imag_radius if imag_phi is None else imag_phi
    prev = None
    cur = None
    used = levels[0]
    for m in levels:
        cur = {}
        z, phi = _box_lattice(box, system.ell, m, box.imag_radius, imag_phi)
        for start in range(0, z.shape[0], 20000):
            chunk = _global_values(system, z[start:start + 20000], phi[start:start + 20000])
            for k, v in chunk.items():
                cur[k] = max(cur.get(k, 0.0), v)
        used = m
        if prev is not None and all(
            abs(cur[k] - prev[k]) <= rel_tol * max(abs(cur[k]), 1e-300) for k in cur
        ):
            break
        prev = cur
    return cur, used


def torus_distance(K, box, rho: float, shape=None) -> float:
    """Sampled distance from K(strip of width rho) to the boundary of the complex box.

    The embedding is evaluated on the grid shifted by ``i rho s`` for every
    sign pattern ``s`` in {-1, 0, 1}^d, via weighted coefficients and an FFT.
    """
    dims = K.dims
    trunc = K.trunc
    shape = as_shape(shape if shape is not None else default_shape(trunc), dims)
    ks = wavenumbers(trunc)
    nodes = grid_nodes(shape)
    lo = np.array(box.lower).reshape((-1,) + (1,) * dims.d)
    hi = np.array(box.upper).reshape((-1,) + (1,) * dims.d)
    best = np.inf
    for signs in itertools.product((-1.0, 0.0, 1.0), repeat=dims.d):
        shift = sum(k * s for k, s in zip(ks, signs))
        weight = np.exp(-TWO_PI * rho * shift)
        c = K.periodic.coeffs * weight
        # complex values from real and imaginary parts of the shifted series
        re = synthesize(0.5 * (c + np.conj(np.flip(c, axis=tuple(range(1, c.ndim))))), shape)
        im = synthesize(-0.5j * (c - np.conj(np.flip(c, axis=tuple(range(1, c.ndim))))), shape)
        for j in range(dims.n):
            w = K.winding[:, j].reshape((-1,) + (1,) * dims.d)
            re = re + w * nodes[j]
            im = im + w * (rho * signs[j])
        real_margin = np.minimum(re - lo, hi - re)
        imag_margin = box.imag_radius - np.abs(im)
        best = min(best, float(np.min(np.minimum(real_margin, imag_margin))))
    return best


def measure_hypotheses(
    K,
    frame: geometry.AdaptedFrame,
    system,
    freqs,
    rho: float,
    box_radius: int = 50,
    a1: float = 2.0,
    a2: float = 2.0,
    lattice_levels=(8, 16, 32),
) -> HypothesisMeasurements:
    """Measure H1-H5 on a candidate torus whose frame already carries its torsion."""
    if frame.avgT_inverse is None:
        raise ValueError("frame has no torsion; call geometry.torsion first")
    st = system.structure
    n = system.n
    prov = {}
    if st.case_tag == geometry.CANONICAL:
        struct_vals = canonical_structure_bounds()
        for k in struct_vals:
            prov[k] = EXACT
    else:
        struct_vals = None
    sampled, m_used = sample_global_bounds(system, lattice_levels)
    vals = {}
    for k, v in sampled.items():
        if struct_vals is not None and k in struct_vals:
            vals[k] = struct_vals[k]
        elif st.constant and k in STRUCTURE_KEYS:
            vals[k] = v
            prov[k] = EXACT
        else:
            vals[k] = SAFETY * v
            prov[k] = f"{SAMPLED} (lattice {m_used}, x{SAFETY})"
    dist = torus_distance(K, system.box, rho)
    if not dist > 0:
        raise DomainError(f"torus strip of width {rho} is not inside the domain (distance {dist:.3e})")
    report = cohomology.check_diophantine(freqs, box_radius)
    gamma = report.certified_gamma
    a3 = 3.0 * a1 / (a1 - 1.0) * a2 / (a2 - 1.0)
    delta = rho / a3
    c_r = cohomology.russmann_bound(freqs, delta, K.dims, K.trunc, gamma=gamma)
    norm_dk = matrix_norm(frame.L, rho)
    norm_dkt = matrix_norm(frame.L.T, rho)
    norm_b = matrix_norm(frame.B, rho)
    avgt_inv = float(np.max(np.abs(frame.avgT_inverse).sum(axis=1)))
    for k in ("sigma_L", "sigma_LT", "sigma_B", "sigma_T"):
        prov[k] = TORUS
    prov["c_R"] = "computed over the truncation box plus Diophantine tail"
    prov["gamma"] = "substituted by the scanned value" if report.substituted else "as requested"
    return HypothesisMeasurements(
        n=n, ell=system.ell, case_tag=st.case_tag, **vals,
        sigma_L=SAFETY * norm_dk, sigma_LT=SAFETY * norm_dkt, sigma_B=SAFETY * norm_b,
        sigma_T=SAFETY * avgt_inv, norm_DK=norm_dk, norm_DKT=norm_dkt, norm_B=norm_b,
        avgT_inv=avgt_inv, dist=dist, gamma=gamma, tau=freqs.tau, rho=rho, delta=delta,
        c_R=c_r, gamma_requested=freqs.gamma, provenance=prov,
    )


# ---------------------------------------------------------------------------
# derived constants


FORMULAS = {
    # geometric construction
    "C_LieOmegaL": "2 n c_Omega0 sigma_L + sigma_LT c_Omega1 sigma_L delta + n sigma_LT c_Omega0",
    "C_OmegaL": "c_R C_LieOmegaL",
    "C_L": "sigma_L",
    "C_LT": "sigma_LT",
    "C_GL": "C_LT c_G0 C_L",
    "C_N0": "c_J0 C_L",
    "C_N0T": "C_LT c_JT0",
    "C_Ntilde": "C_N0 sigma_B",
    "C_NtildeT": "sigma_B C_N0T",
    "C_A": "1/2 C_NtildeT c_Omega0 C_Ntilde | case3: 0",
    "C_N": "C_L C_A + C_Ntilde | case3: C_Ntilde",
    "C_NT": "C_A C_LT + C_NtildeT | case3: C_NtildeT",
    "C_sym": "(1 + C_A) max{1, C_A} C_OmegaL | case3: C_OmegaL max{1, sigma_B^2} | convergence step uses 2 C_sym",
    "C_T": "1/2 (C_NtildeT c_Th C_Ntilde + C_NtildeT c_ThT C_Ntilde) + C_NtildeT c_ThT C_N + C_NT c_Th C_Ntilde | case3: C_NT c_Th C_N",
    "C_TE": "c_Omega1 delta + c_Omega0 c_J1 c_Jinv delta + 2 n c_JT0 C_L sigma_B c_Omega0^2 + n c_JT0 sigma_B C_LT c_Omega0^2",
    "C_TET": "c_Omega1 delta + c_JinvT c_JT1 c_Omega0 delta + n sigma_B C_LT c_J0 c_Omega0^2 + 2 n C_L sigma_B c_J0 c_Omega0^2",
    "C_ELieB": "C_NtildeT c_JinvT C_TE C_Ntilde",
    "C_ELieBT": "C_NtildeT C_TET c_Jinv C_Ntilde",
    "C_ELieNtilde": "delta c_J1 C_L sigma_B + n c_J0 sigma_B + c_J0 C_L C_ELieB",
    "C_ELieNtildeT": "delta sigma_B C_LT c_JT1 + 2 n sigma_B c_JT0 + C_ELieBT C_LT c_JT0",
    "C_ELieA": "1/2 (C_ELieNtildeT c_Omega0 C_Ntilde + delta C_NtildeT c_Omega1 C_Ntilde + C_NtildeT c_Omega0 C_ELieNtilde)",
    "C_ELieN": "C_ELieNtilde + C_L C_ELieA + n C_A",
    "C_ET": "1/2 (C_A C_OmegaL C_NtildeT c_ThT C_Ntilde + C_A C_OmegaL C_NtildeT c_Th C_Ntilde) + C_A C_OmegaL C_A c_Th C_Ntilde + C_A C_OmegaL C_NtildeT c_ThT C_Ntilde C_L C_A + gamma delta^tau C_A C_LT c_Omega0 C_ELieN + gamma delta^tau C_NtildeT c_Omega0 C_ELieN",
    "C_LL": "n",
    "C_LLT": "2 n",
    "C_LieA": "1/2 (C_NtildeT c_ThT C_Ntilde + C_NtildeT c_ThT c_Jinv C_Ntilde C_LT c_JT0 c_Omega0 C_Ntilde + C_NtildeT c_Th C_Ntilde + C_NtildeT c_Omega0 c_J0 C_L C_NtildeT c_JinvT c_Th C_Ntilde) | case3: 0",
    "C_red11": "C_NT c_Omega0 C_LL",
    "C_red12": "C_ET",
    "C_red21": "C_LT c_Omega0 C_LL",
    "C_red22": "(C_LT c_Omega1 C_N delta + C_LLT c_Omega0 C_N + C_LieOmegaL C_A + sigmaDKT c_Omega0 sigma_L C_ELieA) gamma delta^tau + C_OmegaL C_LieA ; sigmaDKT := sigma_LT",
    "C_red": "max{C_red11 gamma delta^tau + C_red12, C_red21 gamma delta^tau + C_red22}",
    # one Newton step
    "C_xiN0": "sigma_T (C_NT c_Omega0 gamma delta^tau + c_R C_T C_LT c_Omega0)",
    "C_xiN": "C_xiN0 + c_R C_LT c_Omega0",
    "C_xiL": "c_R (C_NT c_Omega0 gamma delta^tau + C_T C_xiN)",
    "C_xi": "max{C_xiL, C_xiN gamma delta^tau}",
    "C_DeltaK": "C_L C_xiL + C_N C_xiN gamma delta^tau",
    "C_LiexiN": "C_LT c_Omega0",
    "C_LiexiL": "C_NT c_Omega0 gamma delta^tau + C_T C_xiN",
    "C_Liexi": "max{C_LiexiL, C_LiexiN gamma delta^tau}",
    "C_lin": "C_red C_xi + c_Omega0 C_sym C_Liexi gamma delta^tau",
    "C_E": "(2 (C_L + C_N) C_lin / (gamma^3 delta^(3 tau + 1)) + 1/2 c_Z2 C_DeltaK^2 / (gamma^4 delta^(4 tau))) gamma^4 delta^(4 tau) | table form: 2 (C_L + C_N) C_lin gamma delta^(tau - 1) + 1/2 c_Z2 C_DeltaK^2",
    "C_DeltaL": "n C_DeltaK",
    "C_DeltaLT": "2 n C_DeltaK",
    "C_DeltaG": "c_G1 C_DeltaK",
    "C_DeltaGL": "C_LT c_G0 C_DeltaL + C_LT C_DeltaG C_L delta + C_DeltaLT c_G0 C_L",
    "C_DeltaB": "sigma_B^2 C_DeltaGL",
    "C_DeltaOmega": "c_Omega1 C_DeltaK",
    "C_DeltaJ": "c_J1 C_DeltaK",
    "C_DeltaJT": "c_JT1 C_DeltaK",
    "C_DeltaN0": "c_J0 C_DeltaL + C_DeltaJ C_L delta",
    "C_DeltaN0T": "C_DeltaLT c_JT0 + C_LT C_DeltaJT delta",
    "C_DeltaNtilde": "C_DeltaN0 sigma_B + C_N0 C_DeltaB",
    "C_DeltaNtildeT": "sigma_B C_DeltaN0T + C_DeltaB C_N0T",
    "C_DeltaA": "1/2 (C_DeltaNtildeT c_Omega0 C_Ntilde + C_NtildeT C_DeltaOmega C_Ntilde delta + C_NtildeT c_Omega0 C_DeltaNtilde) | case3: 0",
    "C_DeltaN": "C_A C_DeltaLT + C_DeltaA C_LT + C_DeltaNtilde",
    "C_DeltaNT": "C_A C_DeltaLT + C_DeltaA C_LT + C_DeltaNtildeT",
    "C_DeltaTh": "c_DTh C_DeltaK",
    "C_DeltaThT": "c_ThT1 C_DeltaK",
    "C_DeltaT": "1/2 C_DeltaNtildeT c_Th C_Ntilde + C_NtildeT C_DeltaTh C_Ntilde delta + C_NtildeT c_Th C_DeltaNtilde + 1/2 C_DeltaNtildeT c_ThT C_Ntilde + C_NtildeT C_DeltaThT C_Ntilde delta + C_NtildeT c_ThT C_DeltaNtilde + C_DeltaNtildeT c_ThT C_N + C_NtildeT C_DeltaThT C_N delta + C_NtildeT c_ThT C_DeltaN + C_DeltaNT c_Th C_Ntilde + C_NT C_DeltaTh C_Ntilde delta + C_NT c_Th C_DeltaNtilde",
    "C_DeltaTinv": "sigma_T^2 C_DeltaT",
    # convergence
    "C_Delta1": "max{n C_DeltaK / (sigma_L - |DK|_rho), 2 n C_DeltaK / (sigma_LT - |DK^T|_rho), C_DeltaB / (sigma_B - |B|_rho), C_DeltaTinv / (sigma_T - |<T>^-1|)}",
    "C_Delta2": "C_DeltaK delta / dist(K, boundary)",
    "C_Delta": "max{C_sym gamma delta^tau, C_Delta1 / (1 - a1^(1 - 2 tau)), C_Delta2 / (1 - a1^(-2 tau))}",
    "frakC1": "max{(a1 a3)^(4 tau) C_E, a3^(2 tau + 1) gamma^2 rho^(2 tau - 1) C_Delta}",
    "frakC2": "a3^(2 tau) C_DeltaK / (1 - a1^(-2 tau))",
}

TABLE_ROWS = {
    1: tuple(list(FORMULAS)[: list(FORMULAS).index("C_red") + 1]),
    2: tuple(list(FORMULAS)[list(FORMULAS).index("C_xiN0"): list(FORMULAS).index("C_DeltaTinv") + 1]),
    3: ("C_Delta1", "C_Delta2", "C_Delta", "frakC1", "frakC2"),
}
CASE3_ROWS = ("C_A", "C_N", "C_NT", "C_sym", "C_T", "C_LieA", "C_DeltaA")


@dataclass
class ConstantsLedger:
    case_tag: str
    a1: float
    a2: float
    values: dict
    formulas: dict
    warnings: list = field(default_factory=list)
    frakC1_branch: str = ""

    @property
    def a3(self) -> float:
        return 3.0 * self.a1 / (self.a1 - 1.0) * self.a2 / (self.a2 - 1.0)

    def __getitem__(self, name: str) -> float:
        return self.values[name]

    def rows(self, table: int):
        return [(k, self.values[k], self.formulas[k]) for k in TABLE_ROWS[table]]


def _case3(tag: str) -> bool:
    return tag in (geometry.CASE_III, geometry.CANONICAL)


def derived_constants(m: HypothesisMeasurements, case_tag: str = None, a1: float = 2.0, a2: float = 2.0) -> ConstantsLedger:
    """Evaluate every table row in dependency order."""
    if not (a1 > 1 and a2 > 1):
        raise ValueError("a1 and a2 must exceed 1")
    tag = case_tag or m.case_tag
    c3 = _case3(tag)
    n = m.n
    d = m.delta
    g = m.gamma
    t = m.tau
    rho = m.rho
    gdt = g * d**t
    cR = m.c_R
    sL, sLT, sB, sT = m.sigma_L, m.sigma_LT, m.sigma_B, m.sigma_T
    cO0, cO1 = m.c_Omega0, m.c_Omega1
    cG0, cG1 = m.c_G0, m.c_G1
    cJ0, cJ1, cJT0, cJT1 = m.c_J0, m.c_J1, m.c_JT0, m.c_JT1
    cJi, cJiT = m.c_Jinv, m.c_JinvT
    cTh, cThT, cDTh, cThT1 = m.c_Th, m.c_ThT, m.c_DTh, m.c_ThT1
    v = {}
    warnings = ["sigmaDKT in C_red22 interpreted as sigma_LT"]

    v["C_LieOmegaL"] = 2 * n * cO0 * sL + sLT * cO1 * sL * d + n * sLT * cO0
    v["C_OmegaL"] = cR * v["C_LieOmegaL"]
    v["C_L"] = C_L = sL
    v["C_LT"] = C_LT = sLT
    v["C_GL"] = C_LT * cG0 * C_L
    v["C_N0"] = C_N0 = cJ0 * C_L
    v["C_N0T"] = C_N0T = C_LT * cJT0
    v["C_Ntilde"] = Nt = C_N0 * sB
    v["C_NtildeT"] = NtT = sB * C_N0T
    v["C_A"] = C_A = 0.0 if c3 else 0.5 * NtT * cO0 * Nt
    v["C_N"] = C_N = Nt if c3 else C_L * C_A + Nt
    v["C_NT"] = C_NT = NtT if c3 else C_A * C_LT + NtT
    C_OL = v["C_OmegaL"]
    v["C_sym"] = C_OL * max(1.0, sB**2) if c3 else (1 + C_A) * max(1.0, C_A) * C_OL
    if c3:
        v["C_T"] = C_NT * cTh * C_N
    else:
        v["C_T"] = 0.5 * (NtT * cTh * Nt + NtT * cThT * Nt) + NtT * cThT * C_N + C_NT * cTh * Nt
    C_T = v["C_T"]
    v["C_TE"] = cO1 * d + cO0 * cJ1 * cJi * d + 2 * n * cJT0 * C_L * sB * cO0**2 + n * cJT0 * sB * C_LT * cO0**2
    v["C_TET"] = cO1 * d + cJiT * cJT1 * cO0 * d + n * sB * C_LT * cJ0 * cO0**2 + 2 * n * C_L * sB * cJ0 * cO0**2
    v["C_ELieB"] = NtT * cJiT * v["C_TE"] * Nt
    v["C_ELieBT"] = NtT * v["C_TET"] * cJi * Nt
    v["C_ELieNtilde"] = d * cJ1 * C_L * sB + n * cJ0 * sB + cJ0 * C_L * v["C_ELieB"]
    v["C_ELieNtildeT"] = d * sB * C_LT * cJT1 + 2 * n * sB * cJT0 + v["C_ELieBT"] * C_LT * cJT0
    v["C_ELieA"] = 0.5 * (v["C_ELieNtildeT"] * cO0 * Nt + d * NtT * cO1 * Nt + NtT * cO0 * v["C_ELieNtilde"])
    v["C_ELieN"] = v["C_ELieNtilde"] + C_L * v["C_ELieA"] + n * C_A
    ELN = v["C_ELieN"]
    v["C_ET"] = (
        0.5 * (C_A * C_OL * NtT * cThT * Nt + C_A * C_OL * NtT * cTh * Nt)
        + C_A * C_OL * C_A * cTh * Nt
        + C_A * C_OL * NtT * cThT * Nt * C_L * C_A
        + gdt * C_A * C_LT * cO0 * ELN
        + gdt * NtT * cO0 * ELN
    )
    v["C_LL"] = C_LL = float(n)
    v["C_LLT"] = C_LLT = float(2 * n)
    if c3:
        v["C_LieA"] = 0.0
    else:
        v["C_LieA"] = 0.5 * (
            NtT * cThT * Nt
            + NtT * cThT * cJi * Nt * C_LT * cJT0 * cO0 * Nt
            + NtT * cTh * Nt
            + NtT * cO0 * cJ0 * C_L * NtT * cJiT * cTh * Nt
        )
    v["C_red11"] = C_NT * cO0 * C_LL
    v["C_red12"] = v["C_ET"]
    v["C_red21"] = C_LT * cO0 * C_LL
    sigma_dkt = sLT
    v["C_red22"] = (
        C_LT * cO1 * C_N * d + C_LLT * cO0 * C_N + v["C_LieOmegaL"] * C_A + sigma_dkt * cO0 * sL * v["C_ELieA"]
    ) * gdt + C_OL * v["C_LieA"]
    v["C_red"] = max(v["C_red11"] * gdt + v["C_red12"], v["C_red21"] * gdt + v["C_red22"])

    v["C_xiN0"] = sT * (C_NT * cO0 * gdt + cR * C_T * C_LT * cO0)
    v["C_xiN"] = v["C_xiN0"] + cR * C_LT * cO0
    v["C_xiL"] = cR * (C_NT * cO0 * gdt + C_T * v["C_xiN"])
    v["C_xi"] = max(v["C_xiL"], v["C_xiN"] * gdt)
    v["C_DeltaK"] = DK = C_L * v["C_xiL"] + C_N * v["C_xiN"] * gdt
    v["C_LiexiN"] = C_LT * cO0
    v["C_LiexiL"] = C_NT * cO0 * gdt + C_T * v["C_xiN"]
    v["C_Liexi"] = max(v["C_LiexiL"], v["C_LiexiN"] * gdt)
    v["C_lin"] = v["C_red"] * v["C_xi"] + cO0 * v["C_sym"] * v["C_Liexi"] * gdt
    norm4 = g**4 * d ** (4 * t)
    text_form = (
        2 * (C_L + C_N) * v["C_lin"] / (g**3 * d ** (3 * t + 1)) + 0.5 * m.c_Z2 * DK**2 / norm4
    ) * norm4
    table_form = 2 * (C_L + C_N) * v["C_lin"] * g * d ** (t - 1) + 0.5 * m.c_Z2 * DK**2
    if abs(text_form - table_form) > 1e-12 * max(abs(table_form), 1e-300):
        warnings.append(f"C_E text form {text_form!r} differs from table form {table_form!r}")
    v["C_E"] = text_form
    v["C_DeltaL"] = n * DK
    v["C_DeltaLT"] = 2 * n * DK
    v["C_DeltaG"] = cG1 * DK
    v["C_DeltaGL"] = C_LT * cG0 * v["C_DeltaL"] + C_LT * v["C_DeltaG"] * C_L * d + v["C_DeltaLT"] * cG0 * C_L
    v["C_DeltaB"] = sB**2 * v["C_DeltaGL"]
    v["C_DeltaOmega"] = cO1 * DK
    v["C_DeltaJ"] = cJ1 * DK
    v["C_DeltaJT"] = cJT1 * DK
    v["C_DeltaN0"] = cJ0 * v["C_DeltaL"] + v["C_DeltaJ"] * C_L * d
    v["C_DeltaN0T"] = v["C_DeltaLT"] * cJT0 + C_LT * v["C_DeltaJT"] * d
    v["C_DeltaNtilde"] = dNt = v["C_DeltaN0"] * sB + C_N0 * v["C_DeltaB"]
    v["C_DeltaNtildeT"] = dNtT = sB * v["C_DeltaN0T"] + v["C_DeltaB"] * C_N0T
    if c3:
        v["C_DeltaA"] = 0.0
    else:
        v["C_DeltaA"] = 0.5 * (dNtT * cO0 * Nt + NtT * v["C_DeltaOmega"] * Nt * d + NtT * cO0 * dNt)
    v["C_DeltaN"] = dN = C_A * v["C_DeltaLT"] + v["C_DeltaA"] * C_LT + dNt
    v["C_DeltaNT"] = dNT = C_A * v["C_DeltaLT"] + v["C_DeltaA"] * C_LT + dNtT
    v["C_DeltaTh"] = dTh = cDTh * DK
    v["C_DeltaThT"] = dThT = cThT1 * DK
    v["C_DeltaT"] = (
        0.5 * dNtT * cTh * Nt + NtT * dTh * Nt * d + NtT * cTh * dNt
        + 0.5 * dNtT * cThT * Nt + NtT * dThT * Nt * d + NtT * cThT * dNt
        + dNtT * cThT * C_N + NtT * dThT * C_N * d + NtT * cThT * dN
        + dNT * cTh * Nt + C_NT * dTh * Nt * d + C_NT * cTh * dNt
    )
    v["C_DeltaTinv"] = sT**2 * v["C_DeltaT"]

    a3 = 3.0 * a1 / (a1 - 1.0) * a2 / (a2 - 1.0)
    slack = {
        "sigma_L - |DK|_rho": sL - m.norm_DK,
        "sigma_LT - |DK^T|_rho": sLT - m.norm_DKT,
        "sigma_B - |B|_rho": sB - m.norm_B,
        "sigma_T - |<T>^-1|": sT - m.avgT_inv,
        "dist(K, boundary)": m.dist,
    }
    for row, val in slack.items():
        if not val > 0:
            raise HypothesisSlackError(f"nonpositive denominator {row} = {val!r}", row=row)
    v["C_Delta1"] = max(
        n * DK / slack["sigma_L - |DK|_rho"],
        2 * n * DK / slack["sigma_LT - |DK^T|_rho"],
        v["C_DeltaB"] / slack["sigma_B - |B|_rho"],
        v["C_DeltaTinv"] / slack["sigma_T - |<T>^-1|"],
    )
    v["C_Delta2"] = DK * d / m.dist
    v["C_Delta"] = max(
        v["C_sym"] * gdt,
        v["C_Delta1"] / (1 - a1 ** (1 - 2 * t)),
        v["C_Delta2"] / (1 - a1 ** (-2 * t)),
    )
    first = (a1 * a3) ** (4 * t) * v["C_E"]
    second = a3 ** (2 * t + 1) * g**2 * rho ** (2 * t - 1) * v["C_Delta"]
    v["frakC1"] = max(first, second)
    branch = "(a1 a3)^(4 tau) C_E" if first >= second else "a3^(2 tau + 1) gamma^2 rho^(2 tau - 1) C_Delta"
    v["frakC2"] = a3 ** (2 * t) * DK / (1 - a1 ** (-2 * t))
    for k, val in v.items():
        if not math.isfinite(val):
            raise ValueError(f"constant {k} is not finite")
    if m.gamma < m.gamma_requested:
        warnings.append(f"gamma {m.gamma_requested!r} replaced by scanned {m.gamma!r}")
    return ConstantsLedger(tag, a1, a2, v, {k: FORMULAS[k] for k in v}, warnings, branch)


# ---------------------------------------------------------------------------
# the KAM inequality


@dataclass
class CertificateReport:
    measurements: HypothesisMeasurements
    ledger: ConstantsLedger
    error_norm: float
    lhs: float
    closeness: float
    branch: str
    warnings: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.lhs < 1.0

    @property
    def verdict(self) -> str:
        return "PASS" if self.passed else "FAIL"

    def to_text(self) -> str:
        m = self.measurements
        lines = [
            "KAM certificate (floating point; sampled bounds are not rigorous)",
            f"verdict            {self.verdict}",
            f"lhs                {self.lhs!r}",
            f"closeness bound    {self.closeness!r}",
            f"|E|_rho            {self.error_norm!r}",
            f"frakC1 branch      {self.branch}",
            f"case               {self.ledger.case_tag}",
            f"a1 a2 a3           {self.ledger.a1!r} {self.ledger.a2!r} {self.ledger.a3!r}",
            "",
            "measurements",
        ]
        for k, val in asdict(m).items():
            if k == "provenance":
                continue
            tag = m.provenance.get(k, "")
            lines.append(f"  {k:<16} {val!r}" + (f"   [{tag}]" if tag else ""))
        for table in (1, 2, 3):
            lines.append("")
            lines.append(f"table {table}")
            for k, val, f in self.ledger.rows(table):
                lines.append(f"  {k:<16} {val!r:<24} = {f}")
        if self.warnings:
            lines.append("")
            lines.append("warnings")
            lines.extend(f"  {w}" for w in self.warnings)
        return "\n".join(lines) + "\n"

    def to_kv(self) -> str:
        lines = [
            f"verdict\t{self.verdict}\tlhs < 1",
            f"lhs\t{self.lhs!r}\tfrakC1 |E|_rho / (gamma^4 rho^(4 tau))",
            f"closeness\t{self.closeness!r}\tfrakC2 |E|_rho / (gamma^2 rho^(2 tau))",
            f"E_norm\t{self.error_norm!r}\tweighted Fourier norm at rho",
        ]
        for k, val in asdict(self.measurements).items():
            if k in ("provenance", "case_tag"):
                continue
            lines.append(f"{k}\t{val!r}\t{self.measurements.provenance.get(k, 'input')}")
        for table in (1, 2, 3):
            for k, val, f in self.ledger.rows(table):
                lines.append(f"{k}\t{val!r}\t{f}")
        return "\n".join(lines) + "\n"


def check_kam_condition(ledger: ConstantsLedger, E_norm_rho: float, gamma: float, rho: float, tau: float, measurements=None) -> CertificateReport:
    """frakC1 |E|_rho / (gamma^4 rho^(4 tau)) < 1, strictly."""
    if E_norm_rho < 0:
        raise ValueError("error norm must be nonnegative")
    lhs = ledger["frakC1"] * E_norm_rho / (gamma**4 * rho ** (4 * tau))
    close = ledger["frakC2"] * E_norm_rho / (gamma**2 * rho ** (2 * tau))
    return CertificateReport(measurements, ledger, float(E_norm_rho), float(lhs), float(close), ledger.frakC1_branch, list(ledger.warnings))


def certify(K, system, freqs, rho: float, box_radius: int = 50, a1: float = 2.0, a2: float = 2.0, shape=None, lattice_levels=(8, 16, 32)) -> CertificateReport:
    """Full pipeline: frame, torsion, measurements, ledger and the KAM inequality."""
    from .system import invariance_error

    frame = geometry.build_frame(K, system.structure, shape)
    th = geometry.torsion_kernel_Th(K, system.structure, system, frame.shape)
    frame = geometry.torsion(frame, th)
    meas = measure_hypotheses(K, frame, system, freqs, rho, box_radius, a1, a2, lattice_levels)
    ledger = derived_constants(meas, meas.case_tag, a1, a2)
    e_norm = invariance_error(K, system, freqs, frame.shape).norm(rho)
    return check_kam_condition(ledger, e_norm, meas.gamma, rho, meas.tau, meas)


def read_manifest(path=MANIFEST_PATH) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        name, formula = line.split("\t", 1)
        out[name] = formula
    return out
