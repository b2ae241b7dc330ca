import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from compsketch import Family, Hypothesis, KernelParams, MixtureModel

settings.register_profile(
    "default", max_examples=50, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_chol(rng, d, scale=1.0):
    A = rng.standard_normal((d, d))
    S = A @ A.T + d * np.eye(d)
    return scale * np.linalg.cholesky(S / d)


def mixture(p, C, alphas=None):
    return MixtureModel(Hypothesis(np.atleast_2d(C), alphas), p)


@pytest.fixture
def dirac2():
    return KernelParams(Family.DIRAC, 2, 0.5, 2.0)


@pytest.fixture
def gauss2():
    return KernelParams(Family.GAUSS, 2, np.sqrt(2.0), 4.0)


def random_dipole_tuple(p, ell, rng, box=None, max_tries=10000):
    """``ell`` random dipoles, pairwise 1-separated in rescaled units, placed sequentially."""
    from compsketch.mixtures import Dipole

    d = p.d
    box = 1.5 * ell ** (1.0 / d) if box is None else box
    out, pts = [], []
    for _ in range(max_tries):
        if len(out) == ell:
            break
        centre = rng.uniform(-box, box, d)
        v = rng.standard_normal(d)
        v *= rng.uniform(0, 1) / (2 * np.linalg.norm(v))
        a, b = (centre - v) * p.eps, (centre + v) * p.eps
        if any(np.linalg.norm((q - x) / p.eps) < 1.0 for q in pts for x in (a, b)):
            continue
        a1, a2 = rng.uniform(0, 1, 2)
        if rng.random() < 0.2:
            a2 = 0.0
        out.append(Dipole(a, b, a1, a2, p))
        pts.extend([a, b])
    return out
