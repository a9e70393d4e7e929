import math

import numpy as np
import pytest
from hypothesis import settings

from kamtori import geometry, newton, system
from kamtori.cohomology import Frequencies
from kamtori.fourier import FourierSeries, TorusDims

settings.register_profile("repro", derandomize=True, deadline=None)
settings.load_profile("repro")

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
DIMS11 = TorusDims(1, 1)

# largest coupling at which the trunc-32 continuation from the rotator converges
# cleanly; see the decisions ledger for the breakdown study
PENDULUM_EPS = 0.01


def golden_freqs(gamma=0.01, tau=1.2):
    return Frequencies([GOLDEN], [1.0], gamma, tau)


def random_series(rng, dims=DIMS11, trunc=4, scale=1.0, zero_mean=False, decay=0.0):
    """Real trig polynomial with random coefficients, optionally decaying like e^{-decay |k|}."""
    s = FourierSeries.zeros(dims, trunc)
    shape = s.coeffs.shape
    c = rng.normal(size=shape) + 1j * rng.normal(size=shape)
    if decay:
        k1 = sum(np.abs(np.arange(-t, t + 1)).reshape([-1 if i == j else 1 for i in range(dims.d)])
                 for j, t in enumerate(s.trunc))
        c = c * np.exp(-decay * k1)
    # hermitian symmetrization
    c = 0.5 * (c + np.conj(c[tuple(slice(None, None, -1) for _ in range(dims.d))]))
    if zero_mean:
        c[s.trunc] = 0.0
    return FourierSeries(dims, s.trunc, scale * c)


def solve_pendulum(eps, trunc=32, max_iters=20):
    fr = golden_freqs()
    sysm = system.forced_pendulum(eps)
    K0 = geometry.TorusEmbedding.rotator(fr.dims, trunc, [GOLDEN])
    iterates = [K0]
    steps = []

    def keep(res):
        steps.append(res)
        iterates.append(res.K_new)

    K, hist = newton.run_iteration(K0, sysm, fr, newton.NewtonConfig(max_iters=max_iters), callback=keep)
    return K, hist, iterates, steps


@pytest.fixture(scope="session")
def freqs():
    return golden_freqs()


@pytest.fixture(scope="session")
def pendulum_run():
    return solve_pendulum(PENDULUM_EPS)


@pytest.fixture(scope="session")
def converged_pendulum(pendulum_run):
    K, hist, _, _ = pendulum_run
    assert hist.converged
    return K
