"""Closed-form Gaussian kernels, mean embeddings, MMD and coherence constants.

Both location families induce a Gaussian mean-embedding kernel.  For the
weighted Dirac family the squared norm of the base measure is
``1 / (4 + 2/d)``; for Gaussians with covariance Sigma and frequencies drawn
from ``N(0, s^-2 Sigma^-1)`` it is ``(1 + 2/s^2)^(-d/2)``.  After
normalization both reduce to ``K_sigma(u) = exp(-u^2 / (2 sigma^2))`` applied
to the eps-rescaled distance, with ``sigma = s/eps`` (Diracs) or
``sqrt(2 + s^2)/eps`` (Gaussians).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument, OutOfDomain
from .models import Family, KernelParams, MixtureModel, sigma_star


def k_sigma(u, sigma):
    """Gaussian profile ``exp(-u^2 / (2 sigma^2))``; accepts arrays for ``u``."""
    u_arr = np.asarray(u, dtype=np.float64)
    sigma = float(sigma)
    if not math.isfinite(sigma) or sigma <= 0:
        raise InvalidArgument(f"sigma must be positive and finite, got {sigma}")
    if not np.all(np.isfinite(u_arr)) or np.any(u_arr < 0):
        raise InvalidArgument("u must be finite and nonnegative")
    out = np.exp(-(u_arr**2) / (2.0 * sigma**2))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class KernelValue:
    value: float
    raw: float


def _check_vec(p: KernelParams, x, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1:] != (p.d,):
        raise InvalidArgument(f"{name} must have last dimension {p.d}, got shape {x.shape}")
    return x


def kernel_matrix(p: KernelParams, A, B) -> np.ndarray:
    """Raw mean-embedding kernel between every row of ``A`` and of ``B``."""
    A = np.atleast_2d(_check_vec(p, A, "A"))
    B = np.atleast_2d(_check_vec(p, B, "B"))
    wa = p.whiten(A)
    wb = p.whiten(B)
    if A.shape[0] * B.shape[0] <= 65536:
        # direct differences keep exact zeros for coincident points
        sq = np.sum((wa[:, None, :] - wb[None, :, :]) ** 2, -1)
    else:
        sq = np.sum(wa**2, 1)[:, None] + np.sum(wb**2, 1)[None, :] - 2.0 * wa @ wb.T
        sq = np.maximum(sq, 0.0)
    return p.p0_norm_sq * np.exp(-sq / (2.0 * p.sigma_scale**2))


def mean_embedding_kernel(p: KernelParams, theta, theta_prime) -> KernelValue:
    """Kernel between the base distribution translated to ``theta`` and ``theta_prime``."""
    theta = _check_vec(p, theta, "theta")
    theta_prime = _check_vec(p, theta_prime, "theta_prime")
    if theta.shape != (p.d,) or theta_prime.shape != (p.d,):
        raise InvalidArgument("theta and theta_prime must be vectors of length d")
    dist = float(p.metric(theta, theta_prime))
    value = k_sigma(dist / p.eps, p.bandwidth)
    return KernelValue(value=value, raw=p.p0_norm_sq * value)


def _check_pair(p: KernelParams, tau: MixtureModel, tau_prime: MixtureModel):
    for t in (tau, tau_prime):
        if t.family is not p.family:
            raise InvalidArgument(f"mixture family {t.family.label} does not match kernel family {p.family.label}")
        if t.params.d != p.d:
            raise InvalidArgument("mixture dimension does not match kernel parameters")
        if p.family is Family.GAUSS and not np.array_equal(t.params.sigma_chol, p.sigma_chol):
            raise InvalidArgument("mixtures must share the kernel covariance")


def mmd_squared(p: KernelParams, tau: MixtureModel, tau_prime: MixtureModel) -> float:
    _check_pair(p, tau, tau_prime)
    locs = np.vstack([tau.centroids, tau_prime.centroids])
    w = np.concatenate([tau.alphas, -tau_prime.alphas])
    K = kernel_matrix(p, locs, locs)
    return max(float(w @ K @ w), 0.0)


def mmd(p: KernelParams, tau: MixtureModel, tau_prime: MixtureModel) -> float:
    """Maximum mean discrepancy between two mixtures, in closed form."""
    return math.sqrt(mmd_squared(p, tau, tau_prime))


def coherence_constant(sigma: float) -> float:
    """``C(K_sigma) = 2 sigma^-4 exp(-1/(2 sigma^2))``, valid for sigma <= 1/2."""
    sigma = float(sigma)
    if not sigma > 0:
        raise InvalidArgument("sigma must be positive")
    if sigma > 0.5:
        raise OutOfDomain(f"closed form for C(K_sigma) requires sigma <= 1/2 (sigma^2 <= 1/4), got sigma={sigma}")
    return 2.0 * sigma**-4 * math.exp(-1.0 / (2.0 * sigma**2))


@dataclass(frozen=True)
class CoherenceConstants:
    sigma: float
    k: int
    c_of_k: float
    mutual_coherence_bound: float
    sigma_star: float
    ell_coherence_bound: float


def coherence_constants(p: KernelParams, k: int) -> CoherenceConstants:
    """Coherence constants of the normalized kernel for a component budget ``k``.

    The mutual coherence bound uses the strong-characteristic constant c = 1.
    The l-coherence bound is evaluated at l = 2k (the number of dipoles in the
    difference of two k-mixtures).
    """
    k = int(k)
    if k < 1:
        raise InvalidArgument("k must be a positive integer")
    sigma = p.bandwidth
    c = coherence_constant(sigma)
    M = 4.0 * c
    return CoherenceConstants(
        sigma=sigma,
        k=k,
        c_of_k=c,
        mutual_coherence_bound=M,
        sigma_star=sigma_star(k),
        ell_coherence_bound=M * (2 * k - 1),
    )
