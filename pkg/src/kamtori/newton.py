"""Quasi-Newton correction for the invariance equation and the outer iteration."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import cohomology, geometry
from .errors import DegenerateFrameError, DivergenceError, DomainError, TwistDegeneracyError
from .fourier import (
    VectorSeries,
    analyze,
    as_shape,
    default_shape,
    from_points,
    synthesize,
    to_points,
)
from .system import invariance_error

log = logging.getLogger(__name__)

TRIANGULAR_TOL = 1e-11


@dataclass(frozen=True)
class NewtonConfig:
    max_iters: int = 20
    stop_tol: float = 1e-11
    rho0: float = 0.1
    a1: float = 2.0
    a2: float = 2.0
    shape: tuple = None

    def __post_init__(self):
        if not (self.a1 > 1 and self.a2 > 1):
            raise ValueError("schedule parameters a1, a2 must exceed 1")
        if not self.rho0 > 0:
            raise ValueError("rho0 must be positive")
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")

    @property
    def a3(self) -> float:
        return 3.0 * self.a1 / (self.a1 - 1.0) * self.a2 / (self.a2 - 1.0)

    @property
    def delta0(self) -> float:
        return self.rho0 / self.a3

    def delta(self, s: int) -> float:
        return self.delta0 / self.a1**s

    def rho(self, s: int) -> float:
        # rho_s = rho_0 - 3 delta_0 (1 + 1/a1 + ... + 1/a1^{s-1})
        return self.rho0 - 3.0 * self.delta0 * sum(self.a1 ** (-j) for j in range(s))

    @property
    def rho_limit(self) -> float:
        return self.rho0 / self.a2


@dataclass(frozen=True)
class StepDiagnostics:
    step: int
    rho: float
    delta: float
    error_sup: float
    error_norm: float
    eta_L: float
    eta_N: float
    eta_N_mean: float
    xi_L: float
    xi_N: float
    xi_N00: float
    delta_K: float
    avgT: np.ndarray
    avgT_condition: float
    frame_condition: float
    triangular_residual: float
    truncation_residual: float
    omegaL_average: float
    sym_error_sup: float


@dataclass
class History:
    steps: list = field(default_factory=list)
    final_error: float = np.nan
    converged: bool = False

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def errors(self) -> np.ndarray:
        """Sup errors of the iterates, starting with the input torus."""
        out = [s.error_sup for s in self.steps]
        if np.isfinite(self.final_error):
            out.append(self.final_error)
        return np.array(out)

    def convergence_order(self, last: int = 3) -> float:
        """Least-squares slope of log e_{s+1} against log e_s over the final ``last`` pairs."""
        e = self.errors
        e = e[e > 0]
        if e.size < 3:
            return np.nan
        x = np.log(e[:-1])[-last:]
        y = np.log(e[1:])[-last:]
        if x.size < 2:
            return np.nan
        return float(np.polyfit(x, y, 1)[0])

    @property
    def quadratic(self) -> bool:
        p = self.convergence_order()
        return len(self.errors) >= 4 and abs(p - 2.0) <= 0.3


def _shape_for(K, shape):
    return as_shape(shape if shape is not None else default_shape(K.trunc), K.dims)


def _apply(mat_pts: np.ndarray, vec_pts: np.ndarray) -> np.ndarray:
    return (mat_pts @ vec_pts[..., None])[..., 0]


def project_error(E_nodal: np.ndarray, frame: geometry.AdaptedFrame, trunc):
    """eta^L = -N^T Omega(K) E and eta^N = L^T Omega(K) E; the mean of eta^N is removed.

    Returns ``(eta_L, eta_N, mean_eta_N)`` with the series already centered.
    """
    shape = frame.shape
    e = to_points(E_nodal, 1)
    om_e = _apply(frame.nodal["Omega"], e)
    eta_l = -_apply(np.swapaxes(frame.nodal["N"], 1, 2), om_e)
    eta_n = _apply(np.swapaxes(frame.nodal["L"], 1, 2), om_e)
    dims = frame.L.dims
    cl = analyze(from_points(eta_l, shape), trunc)
    cn = analyze(from_points(eta_n, shape), trunc)
    center = (slice(None),) + tuple(trunc)
    mean_n = cn[center].real.copy()
    cn[center] = 0.0
    return VectorSeries(dims, trunc, cl), VectorSeries(dims, trunc, cn), mean_n


@dataclass(frozen=True)
class TriangularSolution:
    xi_L: VectorSeries
    xi_N: VectorSeries
    xi_N00: np.ndarray
    residual: float


def _mat_times(T_nodal: np.ndarray, v: VectorSeries, shape) -> np.ndarray:
    vp = to_points(v.on_grid(shape), 1)
    return analyze(from_points(_apply(T_nodal, vp), shape), v.trunc)


def solve_triangular(eta_L: VectorSeries, eta_N: VectorSeries, T, avgT_inverse, freqs, shape=None) -> TriangularSolution:
    """Solve L xi^N = eta^N - <eta^N>, T xi^N + L xi^L = eta^L with <xi^L> = 0.

    ``T`` is either a MatrixSeries or nodal values ``(P, n, n)`` on ``shape``.
    """
    trunc = eta_L.trunc
    dims = eta_L.dims
    shape = as_shape(shape if shape is not None else default_shape(trunc), dims)
    if isinstance(T, np.ndarray):
        t_nodal = T
    else:
        t_nodal = to_points(T.on_grid(shape), 2)
    nu = freqs.nu
    center = (slice(None),) + tuple(trunc)
    cn = np.array(eta_N.coeffs)
    cn[center] = 0.0
    r_n = VectorSeries(dims, trunc, cohomology.solve_coeffs(cn, trunc, nu))
    t_rn = _mat_times(t_nodal, r_n, shape)
    rhs_avg = eta_L.coeffs[center].real - t_rn[center].real
    xi00 = np.asarray(avgT_inverse) @ rhs_avg
    xn = np.array(r_n.coeffs)
    xn[center] = xi00
    xi_n = VectorSeries(dims, trunc, xn)
    w = eta_L.coeffs - _mat_times(t_nodal, xi_n, shape)
    xi_l = VectorSeries(dims, trunc, cohomology.solve_coeffs(w, trunc, nu))
    # substitute back
    res_n = cohomology.lie_coeffs(xi_n.coeffs, trunc, nu) - cn
    res_l = _mat_times(t_nodal, xi_n, shape) + cohomology.lie_coeffs(xi_l.coeffs, trunc, nu) - eta_L.coeffs
    residual = float(max(np.max(np.abs(res_n)), np.max(np.abs(res_l))))
    return TriangularSolution(xi_l, xi_n, xi00, residual)


@dataclass(frozen=True, eq=False)
class StepResult:
    K_new: geometry.TorusEmbedding
    diagnostics: StepDiagnostics
    frame: geometry.AdaptedFrame
    error: object


def newton_step(K, system, freqs, shape=None, rho: float = 0.1, delta: float = 0.0, step: int = 0) -> StepResult:
    """One quasi-Newton correction K -> K + L xi^L + N xi^N."""
    structure = system.structure
    shape = _shape_for(K, shape)
    trunc = K.trunc
    err = invariance_error(K, system, freqs, shape)
    frame = geometry.build_frame(K, structure, shape)
    th = geometry.torsion_kernel_Th(K, structure, system, shape)
    frame = geometry.torsion(frame, th)
    eta_l, eta_n, mean_n = project_error(err.nodal, frame, trunc)
    sol = solve_triangular(eta_l, eta_n, frame.nodal["T"], frame.avgT_inverse, freqs, shape)
    xl = to_points(sol.xi_L.on_grid(shape), 1)
    xn = to_points(sol.xi_N.on_grid(shape), 1)
    dk = _apply(frame.nodal["L"], xl) + _apply(frame.nodal["N"], xn)
    dk_c = analyze(from_points(dk, shape), trunc)
    K_new = K.with_periodic(K.periodic.coeffs + dk_c)
    esym = geometry.symplectic_error(frame)
    diag = StepDiagnostics(
        step=step,
        rho=rho,
        delta=delta,
        error_sup=err.sup,
        error_norm=err.norm(rho),
        eta_L=eta_l.norm(rho),
        eta_N=eta_n.norm(rho),
        eta_N_mean=float(np.max(np.abs(mean_n))),
        xi_L=sol.xi_L.norm(0.0),
        xi_N=sol.xi_N.norm(0.0),
        xi_N00=float(np.max(np.abs(sol.xi_N00))),
        delta_K=VectorSeries(K.dims, trunc, dk_c).norm(0.0),
        avgT=np.array(frame.avgT),
        avgT_condition=frame.avgT_condition,
        frame_condition=frame.max_frame_condition,
        triangular_residual=sol.residual,
        truncation_residual=err.truncation_residual,
        omegaL_average=float(np.max(np.abs(frame.OmegaL.average()))),
        sym_error_sup=esym.sup_norm(),
    )
    if sol.residual > TRIANGULAR_TOL * max(1.0, diag.eta_L, diag.eta_N):
        log.warning("triangular solve residual %.3e at step %d", sol.residual, step)
    return StepResult(K_new, diag, frame, err)


def run_iteration(K0, system, freqs, config: NewtonConfig = None, callback=None):
    """Iterate Newton steps until the grid sup error drops below ``stop_tol``.

    Returns ``(K_final, history)``.  Raises :class:`DivergenceError` when the
    error grows on two consecutive steps or an iterate becomes inadmissible.
    """
    config = config or NewtonConfig()
    shape = _shape_for(K0, config.shape)
    nu_before = freqs.nu.tobytes()
    history = History()
    K = K0
    increases = 0
    for s in range(config.max_iters + 1):
        try:
            err = invariance_error(K, system, freqs, shape)
        except DomainError as exc:
            if s == 0:
                raise
            raise DivergenceError(f"iterate {s} left the domain: {exc}", history=history) from exc
        e_sup = err.sup
        if not np.isfinite(e_sup):
            raise DivergenceError(f"non-finite error at iterate {s}", history=history)
        if history.steps:
            prev = history.steps[-1].error_sup
            increases = increases + 1 if e_sup > prev else 0
            if increases >= 2:
                history.final_error = e_sup
                raise DivergenceError(
                    f"error increased on two consecutive steps (now {e_sup:.3e})", history=history
                )
        if e_sup < config.stop_tol or s == config.max_iters:
            history.final_error = e_sup
            history.converged = e_sup < config.stop_tol
            break
        try:
            res = newton_step(K, system, freqs, shape, config.rho(s), config.delta(s), s)
        except (DegenerateFrameError, TwistDegeneracyError, DomainError) as exc:
            if s == 0:
                raise
            raise DivergenceError(f"step {s} failed: {exc}", history=history) from exc
        history.steps.append(res.diagnostics)
        log.info("step %d: |E|_sup=%.3e |dK|=%.3e", s, e_sup, res.diagnostics.delta_K)
        if callback is not None:
            callback(res)
        K = res.K_new
    assert freqs.nu.tobytes() == nu_before
    return K, history


HISTORY_COLUMNS = (
    "step", "rho", "delta", "error_sup", "error_norm", "delta_K", "avgT", "avgT_condition",
    "frame_condition", "eta_N_mean", "triangular_residual", "truncation_residual",
)


def history_table(history: History) -> str:
    lines = ["\t".join(HISTORY_COLUMNS)]
    for d in history.steps:
        row = []
        for c in HISTORY_COLUMNS:
            v = getattr(d, c)
            if c == "avgT":
                v = ";".join(repr(float(x)) for x in np.ravel(v))
            elif c == "step":
                v = str(v)
            else:
                v = repr(float(v))
            row.append(v)
        lines.append("\t".join(row))
    lines.append(f"# final_error\t{history.final_error!r}\tconverged\t{history.converged}")
    return "\n".join(lines) + "\n"
