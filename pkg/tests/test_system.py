import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kamtori import geometry, system
from kamtori.errors import DomainError, ShapeError
from kamtori.geometry import TorusEmbedding
from kamtori.system import (
    DomainBox,
    check_derivatives,
    field_on_torus,
    flow_validate,
    forced_pendulum,
    invariance_error,
)

from conftest import DIMS11, GOLDEN, golden_freqs

TWO_PI = 2 * math.pi


def test_domain_box():
    box = DomainBox((-np.inf, -1.0), (np.inf, 2.0))
    assert box.distance(np.array([[5.0, 0.5]])) == 1.5
    assert box.margins(np.array([[0.0, 3.0]]))[0] == -1.0
    with pytest.raises(ValueError):
        DomainBox((0, 1), (0, 2))


def test_pendulum_field_at_origin():
    s = forced_pendulum(0.05)
    z = np.array([[0.0, 0.7]])
    assert np.allclose(s.vector_field(z, np.array([[0.0]])), [[0.7, 0.0]], atol=1e-16)


def test_field_matches_extended_precision():
    eps = 0.05
    s = forced_pendulum(eps)
    rng = np.random.default_rng(4)
    z = rng.random((6, 2))
    phi = rng.random((6, 1))
    f = s.vector_field(z, phi)
    mpmath.mp.dps = 40
    for zi, pi, fi in zip(z, phi, f):
        x, y, p = (mpmath.mpf(v) for v in (zi[0], zi[1], pi[0]))
        ydot = 2 * mpmath.pi * eps * mpmath.sin(2 * mpmath.pi * x) * (1 + mpmath.cos(2 * mpmath.pi * p))
        assert abs(fi[0] - float(y)) < 1e-13
        assert abs(fi[1] - float(ydot)) < 1e-13


def test_canonical_field_is_hamiltonian():
    s = forced_pendulum(0.1)
    rng = np.random.default_rng(0)
    z = rng.random((20, 2))
    phi = rng.random((20, 1))
    g = s.grad(z, phi)
    f = s.vector_field(z, phi)
    assert np.max(np.abs(f - np.column_stack([g[:, 1], -g[:, 0]]))) < 1e-10


@pytest.mark.parametrize("factory", [lambda: forced_pendulum(0.1), lambda: system.conformal_pendulum(0.1, 0.3)])
def test_derivatives_against_finite_differences(factory):
    s = factory()
    rng = np.random.default_rng(1)
    res = check_derivatives(s, rng.random((20, 2)), rng.random((20, 1)))
    for key, val in res.items():
        assert val < 1e-6, key


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 0.2))
def test_jacobi_identity(seed, eps):
    rng = np.random.default_rng(seed)
    z = rng.random((10, 2))
    phi = rng.random((10, 1))
    for s in (forced_pendulum(eps), system.conformal_pendulum(eps, 0.4)):
        assert s.jacobi_residual(z, phi) < 1e-9


def test_constant_structure_symmetric_omega_dz():
    s = forced_pendulum(0.07)
    rng = np.random.default_rng(3)
    z, phi = rng.random((10, 2)), rng.random((10, 1))
    m = s.structure.omega(z) @ s.field_jacobian(z, phi)
    assert np.max(np.abs(m - np.swapaxes(m, 1, 2))) < 1e-12


def test_system_shape_checks():
    s = forced_pendulum(0.0)
    with pytest.raises(ShapeError):
        system.HamiltonianSystem(2, 1, s.h, s.grad, s.hess, s.structure, s.box)
    with pytest.raises(ValueError):
        forced_pendulum(-1.0)


# --- along a torus ----------------------------------------------------------------


def test_rotator_field_and_error():
    fr = golden_freqs()
    s = system.rotator()
    K = TorusEmbedding.rotator(DIMS11, 8, [GOLDEN])
    f = field_on_torus(K, s)
    assert np.allclose(f[0], GOLDEN) and np.all(f[1] == 0)
    assert invariance_error(K, s, fr).sup < 1e-13
    K1 = TorusEmbedding.rotator(DIMS11, 8, [GOLDEN + 0.1])
    e = invariance_error(K1, s, fr)
    assert np.allclose(e.nodal[0], 0.1, atol=1e-15) and np.max(np.abs(e.nodal[1])) < 1e-15


def test_domain_exit_names_node():
    s = forced_pendulum(0.01, y_range=(-1.0, 0.5))
    K = TorusEmbedding.rotator(DIMS11, 4, [0.7])
    with pytest.raises(DomainError, match="node"):
        invariance_error(K, s, golden_freqs())


@pytest.mark.parametrize("eps", [1e-3, 1e-2, 1e-1])
def test_error_continuous_in_epsilon(eps):
    # |d_x H| <= 2 pi eps * 2, so |E| <= 4 pi eps at the flat torus
    K = TorusEmbedding.rotator(DIMS11, 16, [GOLDEN])
    e = invariance_error(K, forced_pendulum(eps), golden_freqs())
    assert e.sup <= 4 * math.pi * eps * (1 + 1e-12)
    assert e.sup == pytest.approx(4 * math.pi * eps, rel=1e-2)


def test_flow_validate_rotator():
    s = system.rotator()
    K = TorusEmbedding.rotator(DIMS11, 4, [GOLDEN])
    res = flow_validate(K, s, golden_freqs(), t_final=10.0, samples=4)
    assert res.max_deviation < 1e-9
    assert res.per_sample.shape == (4,)


def test_flow_validate_threads_deterministic(converged_pendulum):
    s = forced_pendulum(0.01)
    a = flow_validate(converged_pendulum, s, golden_freqs(), t_final=5.0, samples=4, workers=1)
    b = flow_validate(converged_pendulum, s, golden_freqs(), t_final=5.0, samples=4, workers=3)
    assert np.array_equal(a.per_sample, b.per_sample)


def test_flow_deviation_tracks_error():
    # an unconverged torus drifts away from the flow roughly like |E| t
    s = forced_pendulum(0.01)
    K = TorusEmbedding.rotator(DIMS11, 16, [GOLDEN])
    e = invariance_error(K, s, golden_freqs()).sup
    short = flow_validate(K, s, golden_freqs(), t_final=1.0, samples=6).max_deviation
    long = flow_validate(K, s, golden_freqs(), t_final=4.0, samples=6).max_deviation
    assert 1e-3 * e < short < long
