"""Empirical checks of isometry, moment, separation and Pinsker-type claims."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument
from .frequencies import FrequencySet, derive_seed, make_rng, sample_frequencies
from .kernels import mmd
from .models import Family, Hypothesis, KernelParams, MixtureModel
from .risk import kl_gaussians, separated_cover
from .sketching import atom_embedding, sketch_of_mixture

MAX_ATTEMPTS = 1000


# --------------------------------------------------------------------------
# random separated mixtures


def random_separated_mixture(p: KernelParams, k: int, R: float, rng, factor: float = 2.0) -> MixtureModel:
    """Random ``factor*eps``-separated k-mixture in the R-ball of the family metric.

    Rejection sampling first; after ``MAX_ATTEMPTS`` failures the last draw is
    repaired with the greedy separated cover (which may repeat centroids).
    Weights are uniform on the simplex.
    """
    need = factor * p.eps
    if p.eps > R:
        raise InvalidArgument(f"separation eps={p.eps} exceeds radius R={R}")
    d = p.d
    L = p.sigma_chol
    for _ in range(MAX_ATTEMPTS):
        z = rng.standard_normal((k, d))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        Z = z * (R * rng.uniform(0, 1, k) ** (1.0 / d))[:, None]
        if k == 1:
            break
        diff = Z[:, None, :] - Z[None, :, :]
        D = np.sqrt(np.sum(diff**2, -1))
        if np.all(D[np.triu_indices(k, 1)] >= need):
            break
    else:
        Z = separated_cover(Hypothesis(Z), need, R).cover.centroids
    alphas = rng.dirichlet(np.ones(k))
    return MixtureModel(Hypothesis(Z @ L.T, alphas), p)


# --------------------------------------------------------------------------
# restricted isometry


@dataclass
class RipReport:
    trials: int
    ratios: np.ndarray
    min_ratio: float
    max_ratio: float
    m: int
    k: int
    d: int
    s: float
    eps: float
    seed: int
    skipped: int = 0


def _pair_ratio(fs, p, tau, tau_p):
    den = mmd(p, tau, tau_p) ** 2
    if den <= 0:
        return None
    num = np.linalg.norm(sketch_of_mixture(fs, p, tau.hypothesis) - sketch_of_mixture(fs, p, tau_p.hypothesis)) ** 2
    return num / den


def empirical_rip(p: KernelParams, fs: FrequencySet, k: int, trials: int, seed: int, R: float | None = None) -> RipReport:
    """Ratios ``||A(tau) - A(tau')||^2 / ||tau - tau'||_kappa^2`` over random separated pairs."""
    if fs.params.family is not p.family:
        raise InvalidArgument("frequency set and kernel parameters use different families")
    R = 2.0 * k * p.eps if R is None else float(R)
    if p.eps > R:
        raise InvalidArgument(f"separation eps={p.eps} exceeds radius R={R}")
    ratios = []
    skipped = 0
    for t in range(int(trials)):
        rng = make_rng(derive_seed(seed, t))
        tau = random_separated_mixture(p, k, R, rng)
        tau_p = random_separated_mixture(p, k, R, rng)
        r = _pair_ratio(fs, p, tau, tau_p)
        if r is None:
            skipped += 1
            continue
        ratios.append(r)
    ratios = np.array(ratios)
    return RipReport(int(trials), ratios, float(ratios.min()), float(ratios.max()), fs.m, k, p.d, p.s, p.eps,
                     int(seed), skipped)


@dataclass
class ConcentrationReport:
    m_grid: list
    quantiles: list
    slope: float
    inversions: int


def rip_concentration(p: KernelParams, k: int, m_grid, trials: int, draws: int, seed: int,
                      q: float = 0.99, R: float | None = None) -> ConcentrationReport:
    """Quantile of ``|ratio - 1|`` against m, and its log-log slope.

    Each m uses ``draws`` independent frequency sets; the quantiles are
    averaged geometrically over draws.
    """
    quants = []
    for i, m in enumerate(m_grid):
        logs = []
        for j in range(draws):
            fs = sample_frequencies(p, int(m), derive_seed(seed, i, j))
            rep = empirical_rip(p, fs, k, trials, derive_seed(seed, 10**6 + j), R)
            logs.append(math.log(np.quantile(np.abs(rep.ratios - 1.0), q)))
        quants.append(math.exp(np.mean(logs)))
    slope = float(np.polyfit(np.log(m_grid), np.log(quants), 1)[0])
    inversions = int(np.sum(np.diff(quants) > 0))
    return ConcentrationReport(list(map(int, m_grid)), quants, slope, inversions)


# --------------------------------------------------------------------------
# moment bounds


@dataclass
class MomentBoundReport:
    q: int
    lhs_mc: float
    stderr: float
    rhs: float
    mc_samples: int
    family: str

    @property
    def passed(self) -> bool:
        return self.lhs_mc - 4.0 * self.stderr <= self.rhs


def moment_rhs(p: KernelParams, q: int) -> float:
    """``||pi_0||^2 (2 eps^2 / sigma(s)^2)^q q! / 2``."""
    return p.p0_norm_sq * (2.0 * p.eps**2 / p.sigma_scale**2) ** q * math.factorial(q) / 2.0


def moment_terms(p: KernelParams, omegas: np.ndarray, u: np.ndarray, q: int) -> np.ndarray:
    """Per-frequency ``|<pi_0, phi_omega>|^(2q) <omega, u>^(2q)``."""
    if p.family is Family.DIRAC:
        amp = 1.0 / (1.0 + p.s**2 * np.sum(omegas**2, axis=1) / p.d)
    else:
        amp = np.exp(-0.5 * np.sum((omegas @ p.sigma_chol) ** 2, axis=1))
    return amp ** (2 * q) * (omegas @ u) ** (2 * q)


def moment_bound_check(p: KernelParams, q: int, mc_samples: int, seed: int, direction=None) -> MomentBoundReport:
    """Monte Carlo test of the normalized dipole moment bound along one direction.

    The probe is ``u = eps v`` (Diracs) or ``eps L v`` (Gaussians) with ``v`` a
    unit vector, uniform unless given.
    """
    q = int(q)
    if q < 2:
        raise InvalidArgument("q must be >= 2")
    rng = make_rng(derive_seed(seed, 1))
    if direction is None:
        v = rng.standard_normal(p.d)
    else:
        v = np.asarray(direction, dtype=np.float64)
    v = v / np.linalg.norm(v)
    u = p.eps * (p.sigma_chol @ v)
    fs = sample_frequencies(p, int(mc_samples), derive_seed(seed, 0))
    terms = moment_terms(p, fs.omegas, u, q)
    lhs = float(np.mean(terms))
    se = float(np.std(terms, ddof=1) / math.sqrt(terms.size))
    return MomentBoundReport(q, lhs, se, moment_rhs(p, q), int(mc_samples), p.family.label)


# --------------------------------------------------------------------------
# separation necessity


@dataclass
class WitnessRow:
    eps: float
    delta_loss: float
    delta_loss_lower: float
    sketch_diff: float
    ratio: float


def witness_delta_loss(eps: float, R: float, p: int) -> float:
    """Exact excess-loss gap of the witness pair."""
    return (R / 2) ** p * ((1 + eps / R) ** p - 1) + (eps / 2) ** p


def separation_witness(eps_list, R: float, p: int, fs: FrequencySet) -> list:
    """Ratio of excess-loss gap to sketch distance for ever-closer point pairs.

    ``tau = (delta_{+eps/2 e1} + delta_{-eps/2 e1}) / 2`` against ``tau' = delta_0``.
    """
    if p not in (1, 2):
        raise InvalidArgument("p must be 1 or 2")
    rows = []
    e1 = np.zeros(fs.d)
    e1[0] = 1.0
    kp = fs.params
    for eps in eps_list:
        eps = float(eps)
        if not 0 < eps <= R:
            raise InvalidArgument("each eps must satisfy 0 < eps <= R")
        plus = atom_embedding(fs, kp, 0.5 * eps * e1)
        minus = atom_embedding(fs, kp, -0.5 * eps * e1)
        zero = atom_embedding(fs, kp, np.zeros(fs.d))
        diff = float(np.linalg.norm(0.5 * (plus + minus) - zero))
        lower = p * (R / 2) ** p * eps / R
        rows.append(WitnessRow(eps, witness_delta_loss(eps, R, p), lower, diff,
                               lower / diff if diff > 0 else math.inf))
    return rows


# --------------------------------------------------------------------------
# Pinsker-type comparison


@dataclass
class PinskerReport:
    lhs: np.ndarray
    rhs: float
    mmd: float
    margins: np.ndarray = field(default=None)

    @property
    def passed(self) -> int:
        return int(np.sum(self.lhs <= self.rhs + 1e-15))

    @property
    def all_passed(self) -> bool:
        return self.passed == self.lhs.size


def pinsker_check(p: KernelParams, theta, theta_star, m: int, trials: int, seed: int) -> PinskerReport:
    """Sketch distance of two Gaussians against ``sqrt(2 KL)``, over fresh frequency draws."""
    if p.family is not Family.GAUSS:
        raise InvalidArgument("pinsker_check requires the Gaussian family")
    theta = np.asarray(theta, dtype=np.float64)
    theta_star = np.asarray(theta_star, dtype=np.float64)
    Sigma = p.covariance
    rhs = math.sqrt(2.0 * kl_gaussians(theta, Sigma, theta_star, Sigma))
    lhs = np.empty(int(trials))
    for t in range(int(trials)):
        fs = sample_frequencies(p, m, derive_seed(seed, t))
        lhs[t] = np.linalg.norm(atom_embedding(fs, p, theta) - atom_embedding(fs, p, theta_star))
    dist = mmd(p, MixtureModel(Hypothesis(theta[None, :]), p), MixtureModel(Hypothesis(theta_star[None, :]), p))
    return PinskerReport(lhs, rhs, dist, rhs - lhs)
