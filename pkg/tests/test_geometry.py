import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kamtori import geometry, system
from kamtori.errors import DegenerateFrameError, ShapeError, TwistDegeneracyError
from kamtori.fourier import TorusDims, VectorSeries, grid_nodes, to_points
from kamtori.geometry import (
    CASE_II,
    CASE_III,
    TorusEmbedding,
    build_frame,
    darboux,
    reduced_form,
    symplectic_error,
    symplectic_error_blocks,
    tangent_frame,
    torsion,
    torsion_alternative,
    torsion_kernel_Th,
    torsion_via_lie,
)

from conftest import DIMS11, GOLDEN, golden_freqs, random_series

TWO_PI = 2 * math.pi
OM0 = darboux(1)


def random_embedding(seed, dims=DIMS11, trunc=4, amp=0.02, actions=None):
    rng = np.random.default_rng(seed)
    n = dims.n
    actions = np.full(n, 0.5) if actions is None else actions
    K = TorusEmbedding.rotator(dims, trunc, actions)
    parts = [K.periodic[i] + random_series(rng, dims, trunc, scale=amp, decay=0.7) for i in range(2 * n)]
    return TorusEmbedding(VectorSeries.from_components(parts), K.winding)


def sum_pendulum(n, eps, structure):
    """H = |y|^2/2 + eps sum_i cos(2 pi x_i)(1 + cos(2 pi phi)) for an arbitrary constant structure."""

    def f(phi):
        return 1.0 + np.cos(TWO_PI * phi).sum(axis=1)

    def h(z, phi):
        x, y = z[:, :n], z[:, n:]
        return 0.5 * (y**2).sum(axis=1) + eps * np.cos(TWO_PI * x).sum(axis=1) * f(phi)

    def grad(z, phi):
        out = np.array(z, dtype=np.result_type(z, float))
        out[:, :n] = -TWO_PI * eps * np.sin(TWO_PI * z[:, :n]) * f(phi)[:, None]
        return out

    def hess(z, phi):
        out = np.zeros((z.shape[0], 2 * n, 2 * n), dtype=np.result_type(z, float))
        for i in range(n):
            out[:, i, i] = -TWO_PI**2 * eps * np.cos(TWO_PI * z[:, i]) * f(phi)
            out[:, n + i, n + i] = 1.0
        return out

    box = system.DomainBox([-np.inf] * n + [-3.0] * n, [np.inf] * n + [3.0] * n)
    return system.HamiltonianSystem(n, 1, h, grad, hess, structure, box, name="sum_pendulum")


def case2_structure(n, seed=0):
    rng = np.random.default_rng(seed)
    m = rng.normal(size=(2 * n, 2 * n))
    g = m @ m.T + 2 * np.eye(2 * n)
    return geometry.constant_structure(darboux(n), g, CASE_II)


# --- structures -----------------------------------------------------------------


def test_canonical_structure():
    s = geometry.canonical(1)
    z = np.zeros((3, 2))
    assert np.array_equal(s.omega(z)[0], OM0)
    assert np.array_equal(s.g(z)[0], np.eye(2))
    assert np.allclose(s.j(z)[0], OM0)
    assert s.anti_involution_residual(z) < 1e-15


def test_structure_invariants():
    with pytest.raises(ValueError):
        geometry.constant_structure(np.eye(2), np.eye(2), CASE_III)
    with pytest.raises(ValueError):
        geometry.constant_structure(OM0, np.diag([2.0, 3.0]), CASE_III)
    s = geometry.constant_structure(OM0, np.diag([2.0, 0.5]), CASE_III)
    z = np.zeros((1, 2))
    j = s.j(z)[0]
    assert np.allclose(j, -np.linalg.solve(OM0, np.diag([2.0, 0.5])))
    assert np.allclose(j.T @ OM0 @ j, OM0)
    assert np.allclose(j.T @ s.g(z)[0] @ j, s.g(z)[0])


def test_conformal_structure_derivatives():
    s = geometry.conformal_structure(0.3)
    z = np.random.default_rng(0).random((5, 2))
    h = 1e-6
    e = np.array([h, 0.0])
    fd = (s.omega(z + e) - s.omega(z - e)) / (2 * h)
    assert np.allclose(s.domega(z)[..., 0], fd, atol=1e-8)
    fdj = (s.j(z + e) - s.j(z - e)) / (2 * h)
    assert np.allclose(s.dj(z)[..., 0], fdj, atol=1e-7)
    assert s.anti_involution_residual(z) > 1e-3


# --- tangent frame and reduced form ----------------------------------------------------


def test_tangent_frame_examples():
    K = TorusEmbedding.rotator(DIMS11, 3, [0.4])
    L = tangent_frame(K)
    assert L.average().tolist() == [[1.0], [0.0]]
    assert np.all(L.on_grid(8)[:, :, 1:, :] == L.on_grid(8)[:, :, :1, :])
    c = K.periodic.coeffs.copy()
    c[0, 3 + 1, 3] += 0.5
    c[0, 3 - 1, 3] += 0.5
    L2 = tangent_frame(K.with_periodic(c)).on_grid(8)
    x, _ = grid_nodes((8, 8))
    assert np.allclose(L2[0, 0], 1 - TWO_PI * np.sin(TWO_PI * x) * np.ones((1, 8)), atol=1e-13)


def test_tangent_frame_finite_differences():
    K = random_embedding(5)
    L = tangent_frame(K)
    rng = np.random.default_rng(1)
    h = 1e-6
    pts = rng.random((10, 2))
    e = np.array([h, 0.0])
    fd = (K.at(pts + e) - K.at(pts - e)) / (2 * h)
    # evaluate L at the same points by direct summation of its series
    from kamtori.fourier import evaluate

    for p, col in zip(pts, fd):
        exact = [evaluate(L[i, 0], p) for i in range(2)]
        assert np.allclose(exact, col, rtol=1e-7, atol=1e-7)


def test_reduced_form_n1_vanishes():
    K = random_embedding(2)
    ol = reduced_form(K, tangent_frame(K), geometry.canonical(1))
    assert np.max(np.abs(ol.coeffs)) < 1e-15


@settings(max_examples=20)
@given(st.integers(0, 2**32 - 1))
def test_lagrangian_average_n2(seed):
    K = random_embedding(seed, TorusDims(2, 1), trunc=3, amp=0.05, actions=np.array([0.3, 0.7]))
    ol = reduced_form(K, tangent_frame(K), geometry.canonical(2))
    assert np.max(np.abs(ol.average())) < 1e-10
    assert np.max(np.abs(ol.coeffs + np.swapaxes(ol.coeffs, 0, 1))) < 1e-14


# --- frame -----------------------------------------------------------------------


def test_rotator_frame_by_hand():
    K = TorusEmbedding.rotator(DIMS11, 4, [GOLDEN])
    fr = build_frame(K, geometry.canonical(1))
    assert np.allclose(fr.L.average(), [[1], [0]])
    assert np.allclose(fr.B.average(), [[1]])
    assert np.allclose(fr.Ntilde.average(), [[0], [1]])
    assert np.allclose(fr.N.average(), [[0], [1]])
    assert np.all(fr.A.coeffs == 0)
    assert np.allclose(fr.P.average(), np.eye(2))
    assert symplectic_error(fr).sup_norm() == 0.0


def test_degenerate_frame_reported():
    K = TorusEmbedding.rotator(DIMS11, 2, [0.5])
    flat = TorusEmbedding(K.periodic, np.zeros((2, 1)))
    with pytest.raises(DegenerateFrameError) as info:
        build_frame(flat, geometry.canonical(1))
    assert info.value.node is not None


def test_structure_dimension_mismatch():
    with pytest.raises(ShapeError):
        build_frame(random_embedding(0), geometry.canonical(2))


@settings(max_examples=15)
@given(st.integers(0, 2**32 - 1))
def test_frame_identities_case2(seed):
    dims = TorusDims(2, 1)
    K = random_embedding(seed, dims, trunc=3, amp=0.05, actions=np.array([0.3, 0.7]))
    s = case2_structure(2, seed % 7)
    fr = build_frame(K, s)
    a = fr.nodal["A"]
    assert np.max(np.abs(a + np.swapaxes(a, 1, 2))) < 1e-13
    b = fr.nodal["B"]
    assert np.max(np.abs(b - np.swapaxes(b, 1, 2))) < 1e-13
    # E_sym equals its block expression
    es = symplectic_error(fr).values
    blocks = symplectic_error_blocks(fr).values
    assert np.max(np.abs(es - blocks)) < 1e-10
    # L^T Omega N + I bounded by |Omega_L| |A|
    lp, nn, om, ol = fr.nodal["L"], fr.nodal["N"], fr.nodal["Omega"], fr.nodal["OmegaL"]
    lon = np.swapaxes(lp, 1, 2) @ om @ nn + np.eye(2)
    bound = np.max(np.abs(ol).sum(axis=2)) * np.max(np.abs(a).sum(axis=2))
    assert np.max(np.abs(lon).sum(axis=2)) <= bound + 1e-10


def test_case3_esym_blocks():
    s = geometry.constant_structure(OM0, np.diag([2.0, 0.5]), CASE_III)
    fr = build_frame(random_embedding(4), s)
    es = symplectic_error(fr).values
    assert np.max(np.abs(es[0, 1])) < 1e-14 and np.max(np.abs(es[1, 0])) < 1e-14
    assert np.max(np.abs(es - symplectic_error_blocks(fr).values)) < 1e-12


# --- torsion ----------------------------------------------------------------------


def test_th_kernel_free_particle_by_hand():
    sysm = system.rotator()
    z = np.array([[0.3, 0.6]])
    phi = np.array([[0.2]])
    assert np.allclose(sysm.field_jacobian(z, phi)[0], [[0, 1], [0, 0]])
    th = geometry.th_kernel_points(z, phi, sysm.structure, sysm)
    assert np.allclose(th[0], [[-1, 0], [0, 1]], atol=1e-15)


def test_th_kernel_phi_independent_at_zero_coupling():
    sysm = system.forced_pendulum(0.0)
    rng = np.random.default_rng(0)
    z = np.tile([[0.1, 0.4]], (6, 1))
    th = geometry.th_kernel_points(z, rng.random((6, 1)), sysm.structure, sysm)
    assert np.all(th == th[:1])


def test_th_kernel_finite_differences():
    sysm = system.forced_pendulum(0.05)
    rng = np.random.default_rng(0)
    z = rng.random((8, 2))
    phi = rng.random((8, 1))
    res = system.check_derivatives(sysm, z, phi)
    assert res["field_jacobian"] < 1e-6
    om = sysm.structure.omega(z)
    j = sysm.structure.j(z)
    h = 1e-6
    cols = []
    for l in range(2):
        e = np.zeros(2)
        e[l] = h
        cols.append((sysm.vector_field(z + e, phi) - sysm.vector_field(z - e, phi)) / (2 * h))
    dz = np.stack(cols, axis=-1)
    th_fd = om @ (dz + j @ dz @ j)
    th = geometry.th_kernel_points(z, phi, sysm.structure, sysm)
    assert np.max(np.abs(th - th_fd)) < 1e-6 * max(1.0, np.max(np.abs(th)))


def test_rotator_torsion_is_one():
    sysm = system.rotator()
    K = TorusEmbedding.rotator(DIMS11, 4, [GOLDEN])
    fr = build_frame(K, sysm.structure)
    fr = torsion(fr, torsion_kernel_Th(K, sysm.structure, sysm))
    assert abs(fr.avgT[0, 0] - 1.0) < 1e-12
    assert np.max(np.abs(fr.nodal["T"] - 1.0)) < 1e-12
    lie = torsion_via_lie(fr, K, sysm, golden_freqs())
    assert np.max(np.abs(lie.values - 1.0)) < 1e-12


def test_zero_field_torsion_zero():
    s = geometry.canonical(1)
    zero = system.HamiltonianSystem(
        1, 1,
        lambda z, p: np.zeros(z.shape[0]),
        lambda z, p: np.zeros_like(z),
        lambda z, p: np.zeros((z.shape[0], 2, 2)),
        s, system.DomainBox((-np.inf, -1), (np.inf, 1)),
    )
    K = TorusEmbedding.rotator(DIMS11, 3, [0.2])
    fr = build_frame(K, s)
    th = torsion_kernel_Th(K, s, zero)
    assert np.all(th.values == 0)
    with pytest.raises(TwistDegeneracyError):
        torsion(fr, th)
    assert np.all(torsion_via_lie(fr, K, zero, golden_freqs()).values == 0)


def test_case2_alternative_form_agrees_when_A_vanishes():
    sysm = system.conformal_pendulum(0.02, 0.3)
    K = random_embedding(3, actions=np.array([GOLDEN]))
    fr = build_frame(K, sysm.structure)
    assert fr.case_tag == CASE_II
    th = torsion_kernel_Th(K, sysm.structure, sysm)
    fr = torsion(fr, th)
    alt = to_points(torsion_alternative(fr, th).values, 2)
    assert np.max(np.abs(fr.nodal["T"] - alt)) < 1e-12


def test_case2_with_zero_A_reduces_to_case3():
    sysm = system.forced_pendulum(0.02)
    K = random_embedding(9, actions=np.array([GOLDEN]))
    fr = build_frame(K, sysm.structure)
    th = torsion_kernel_Th(K, sysm.structure, sysm)
    t2 = torsion(fr, th, CASE_II).nodal["T"]
    t3 = torsion(fr, th, CASE_III).nodal["T"]
    assert np.max(np.abs(t2 - t3)) < 1e-12


@settings(max_examples=10)
@given(st.integers(0, 2**32 - 1))
def test_case2_torsion_against_alternative_form(seed):
    dims = TorusDims(2, 1)
    s = case2_structure(2, seed % 5)
    sysm = sum_pendulum(2, 0.03, s)
    K = random_embedding(seed, dims, trunc=3, amp=0.05, actions=np.array([0.3, 0.7]))
    fr = build_frame(K, s)
    assert np.max(np.abs(fr.nodal["A"])) > 1e-6
    th = torsion_kernel_Th(K, s, sysm)
    fr = torsion(fr, th)
    alt = to_points(torsion_alternative(fr, th).values, 2)
    # the variant is not algebraically identical once A != 0; check the exact gap
    tp = to_points(th.values, 2)
    tpt = np.swapaxes(tp, 1, 2)
    m = fr.nodal["L"] @ fr.nodal["A"]
    mt = np.swapaxes(m, 1, 2)
    nn = fr.nodal["N"]
    gap = mt @ (1.5 * tpt - 0.5 * tp) @ nn + np.swapaxes(nn, 1, 2) @ (0.5 * (tp + tpt)) @ m
    assert np.max(np.abs(alt - fr.nodal["T"] - gap)) < 1e-10
    assert np.max(np.abs(fr.avgT - fr.avgT.T)) < 1e-10 * max(1.0, np.max(np.abs(fr.avgT)))


@settings(max_examples=10)
@given(st.integers(0, 2**32 - 1))
def test_case3_torsion_symmetric(seed):
    s = geometry.constant_structure(darboux(2), np.diag([2.0, 3.0, 0.5, 1 / 3]), CASE_III)
    sysm = sum_pendulum(2, 0.03, s)
    K = random_embedding(seed, TorusDims(2, 1), trunc=3, amp=0.05, actions=np.array([0.3, 0.7]))
    fr = torsion(build_frame(K, s), torsion_kernel_Th(K, s, sysm))
    assert np.max(np.abs(fr.T.coeffs - np.swapaxes(fr.T.coeffs, 0, 1))) < 1e-10
    assert np.allclose(fr.avgT @ fr.avgT_inverse, np.eye(2), atol=1e-10)


def test_torsion_grid_mismatch():
    sysm = system.rotator()
    K = TorusEmbedding.rotator(DIMS11, 4, [GOLDEN])
    fr = build_frame(K, sysm.structure)
    with pytest.raises(ShapeError):
        torsion(fr, torsion_kernel_Th(K, sysm.structure, sysm, shape=20))


# --- on the solved pendulum -------------------------------------------------------------


def test_converged_torus_frame(converged_pendulum, pendulum_run):
    sysm = system.forced_pendulum(0.01)
    fr = build_frame(converged_pendulum, sysm.structure)
    fr = torsion(fr, torsion_kernel_Th(converged_pendulum, sysm.structure, sysm))
    assert symplectic_error(fr).sup_norm() < 1e-12
    # <T> stays within O(eps) of the integrable twist
    assert abs(fr.avgT[0, 0] - 1.0) < 10 * 0.01
    lie = torsion_via_lie(fr, converged_pendulum, sysm, golden_freqs())
    assert np.max(np.abs(lie.values - torsion(fr, torsion_kernel_Th(converged_pendulum, sysm.structure, sysm)).nodal["T"].reshape(1, 1, *fr.shape))) < 1e-8


def test_embedding_files_round_trip(tmp_path, converged_pendulum):
    geometry.write_embedding(converged_pendulum, tmp_path)
    back = geometry.read_embedding(tmp_path)
    assert np.array_equal(back.periodic.coeffs, converged_pendulum.periodic.coeffs)
    assert np.array_equal(back.winding, converged_pendulum.winding)
