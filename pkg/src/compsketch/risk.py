"""Ground-truth risks and the geometry of constrained hypothesis classes."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import InvalidArgument
from .models import Family, Hypothesis, KernelParams, MixtureModel

TASKS = ("kmeans", "kmedians", "gmm")


@dataclass
class RiskReport:
    task: str
    risk: float
    per_cluster: np.ndarray | None
    n: int

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "risk": float(self.risk),
            "per_cluster": None if self.per_cluster is None else [float(v) for v in self.per_cluster],
            "n": int(self.n),
        }


def _weighted_points(data, d: int | None = None):
    """Samples (uniform weights) or a Dirac mixture -> (points, weights summing to 1)."""
    if isinstance(data, MixtureModel):
        if data.family is not Family.DIRAC:
            raise InvalidArgument("expected a Dirac mixture or raw samples")
        return np.asarray(data.centroids), np.asarray(data.alphas)
    if isinstance(data, Hypothesis):
        return np.asarray(data.centroids), np.asarray(data.alphas)
    X = np.asarray(data, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None] if d == 1 else X[None, :]
    if X.ndim != 2 or X.shape[0] == 0:
        raise InvalidArgument("data must be a non-empty n x d array")
    if d is not None and X.shape[1] != d:
        raise InvalidArgument(f"data dimension {X.shape[1]} does not match hypothesis dimension {d}")
    return X, np.full(X.shape[0], 1.0 / X.shape[0])


def _sq_dists(X, C):
    return np.sum((X[:, None, :] - C[None, :, :]) ** 2, axis=-1)


def voronoi_assign(X, C) -> np.ndarray:
    """Index of the nearest centroid, ties going to the lowest index."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    C = np.atleast_2d(np.asarray(C, dtype=np.float64))
    out = np.empty(X.shape[0], dtype=np.intp)
    step = max(1, 2**20 // max(1, C.shape[0] * C.shape[1]))
    for i in range(0, X.shape[0], step):
        out[i : i + step] = np.argmin(_sq_dists(X[i : i + step], C), axis=1)
    return out


def clustering_risk(data, h: Hypothesis, p: int = 2) -> RiskReport:
    """k-means (p=2) or k-medians (p=1) risk of ``h`` on samples or a Dirac mixture."""
    if p not in (1, 2):
        raise InvalidArgument("p must be 1 (k-medians) or 2 (k-means)")
    X, w = _weighted_points(data, h.d)
    lab = voronoi_assign(X, h.centroids)
    dist = np.linalg.norm(X - h.centroids[lab], axis=1)
    loss = dist**p
    per = np.bincount(lab, weights=w * loss, minlength=h.k)
    n = X.shape[0]
    return RiskReport("kmeans" if p == 2 else "kmedians", float(math.fsum(w * loss)), per, n)


def voronoi_pushforward(data, h: Hypothesis, params: KernelParams | None = None) -> MixtureModel:
    """Mixture of Diracs at the centroids weighted by the mass of each Voronoi cell."""
    X, w = _weighted_points(data, h.d)
    lab = voronoi_assign(X, h.centroids)
    alphas = np.bincount(lab, weights=w, minlength=h.k)
    alphas = alphas / alphas.sum()
    if params is None:
        params = data.params if isinstance(data, MixtureModel) else KernelParams(Family.DIRAC, h.d, 1.0, 1.0)
    return MixtureModel(Hypothesis(h.centroids, alphas), params)


def lloyd_residual(data, h: Hypothesis) -> np.ndarray:
    """Distance from each centroid to the mean of its Voronoi cell (0 for empty cells)."""
    X, w = _weighted_points(data, h.d)
    lab = voronoi_assign(X, h.centroids)
    out = np.zeros(h.k)
    for l in range(h.k):
        mask = lab == l
        if np.any(mask):
            mean = np.average(X[mask], axis=0, weights=w[mask])
            out[l] = float(np.linalg.norm(mean - h.centroids[l]))
    return out


# --------------------------------------------------------------------------
# Gaussian likelihood and divergence


def _chol(S, name="covariance"):
    S = np.atleast_2d(np.asarray(S, dtype=np.float64))
    if S.shape[0] != S.shape[1] or not np.allclose(S, S.T, rtol=1e-12, atol=1e-14):
        raise InvalidArgument(f"{name} must be a symmetric matrix")
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise InvalidArgument(f"{name} is not positive definite") from exc


def gmm_nll(data, h: Hypothesis, sigma) -> RiskReport:
    """Mean negative log-likelihood of a shared-covariance Gaussian mixture."""
    X, w = _weighted_points(data, h.d)
    L = _chol(sigma)
    from scipy.linalg import solve_triangular

    d = h.d
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    Z = solve_triangular(L, X.T, lower=True).T
    M = solve_triangular(L, h.centroids.T, lower=True).T
    maha = _sq_dists(Z, M)
    with np.errstate(divide="ignore"):
        log_alpha = np.log(h.alphas)
    logp = logsumexp(log_alpha[None, :] - 0.5 * maha, axis=1) - 0.5 * (d * math.log(2 * math.pi) + logdet)
    return RiskReport("gmm", float(-math.fsum(w * logp)), None, X.shape[0])


def kl_gaussians(theta1, sigma1, theta2, sigma2) -> float:
    """KL(N(theta1, Sigma1) || N(theta2, Sigma2)) in closed form."""
    t1 = np.atleast_1d(np.asarray(theta1, dtype=np.float64))
    t2 = np.atleast_1d(np.asarray(theta2, dtype=np.float64))
    L1 = _chol(sigma1, "sigma1")
    L2 = _chol(sigma2, "sigma2")
    d = t1.size
    if L1.shape != (d, d) or L2.shape != (d, d) or t2.shape != (d,):
        raise InvalidArgument("inconsistent dimensions")
    from scipy.linalg import solve_triangular

    logdet = 2.0 * (np.sum(np.log(np.diag(L2))) - np.sum(np.log(np.diag(L1))))
    A = solve_triangular(L2, L1, lower=True)
    trace = float(np.sum(A**2))
    z = solve_triangular(L2, t2 - t1, lower=True)
    val = 0.5 * (logdet + trace - d + float(z @ z))
    return max(val, 0.0)


# --------------------------------------------------------------------------
# distances between hypotheses


@dataclass(frozen=True)
class HypothesisDistance:
    forward: float  # d(c || c')
    backward: float  # d(c' || c)

    @property
    def symmetric(self) -> float:
        return max(self.forward, self.backward)


def _centroids(c, metric=None):
    C = c.centroids if isinstance(c, Hypothesis) else np.atleast_2d(np.asarray(c, dtype=np.float64))
    return C


def _whiten(C, metric):
    if metric is None:
        return C
    if isinstance(metric, KernelParams):
        return metric.whiten(C)
    from scipy.linalg import solve_triangular

    return solve_triangular(np.asarray(metric, dtype=np.float64), C.T, lower=True).T


def hypothesis_distance(c, c_prime, metric=None) -> HypothesisDistance:
    """Directed and symmetric max-min distances between two centroid sets."""
    A = _whiten(_centroids(c), metric)
    B = _whiten(_centroids(c_prime), metric)
    D = np.sqrt(_sq_dists(A, B))
    return HypothesisDistance(float(D.min(axis=1).max()), float(D.min(axis=0).max()))


def isolated_set(c, eps: float, metric=None) -> list:
    """Indices of centroids whose every other centroid is equal or at least ``eps`` away."""
    C0 = _centroids(c)
    C = _whiten(C0, metric)
    out = []
    for i in range(C.shape[0]):
        ok = True
        for j in range(C.shape[0]):
            if j == i or np.array_equal(C0[i], C0[j]):
                continue
            if np.linalg.norm(C[i] - C[j]) < eps:
                ok = False
                break
        if ok:
            out.append(i)
    return out


@dataclass
class CoverResult:
    cover: Hypothesis
    distance: float
    preserved_isolated: list = field(default_factory=list)
    picked: list = field(default_factory=list)


def separated_cover(c, eps: float, R: float, metric=None) -> CoverResult:
    """Greedy ``eps``-separated replacement of a centroid set.

    Repeatedly keep the lowest remaining index and discard everything within
    the open ball of radius ``eps`` around it; pad to length k by repeating
    the last pick.  Weights of discarded centroids move to the one that
    discarded them.
    """
    h = c if isinstance(c, Hypothesis) else Hypothesis(c)
    C = h.centroids
    W = _whiten(C, metric)
    k = h.k
    if eps < 0:
        raise InvalidArgument("eps must be nonnegative")
    remaining = list(range(k))
    picked, weights = [], []
    while remaining:
        i = remaining[0]
        near = [j for j in remaining if np.linalg.norm(W[j] - W[i]) < eps or np.array_equal(C[j], C[i])]
        picked.append(i)
        weights.append(float(np.sum(h.alphas[near])))
        remaining = [j for j in remaining if j not in near]
    rows = [C[i] for i in picked] + [C[picked[-1]]] * (k - len(picked))
    alphas = np.array(weights + [0.0] * (k - len(picked)))
    cover = Hypothesis(np.array(rows), alphas / alphas.sum())
    dist = hypothesis_distance(h, cover, metric).symmetric
    iso = isolated_set(h, eps, metric)
    kept = {tuple(C[i]) for i in picked}
    preserved = [i for i in iso if tuple(C[i]) in kept]
    return CoverResult(cover, dist, preserved, picked)


# --------------------------------------------------------------------------
# excess-risk divergence (lower estimate)


def _risk(data, h, p):
    return clustering_risk(data, h, p).risk


def excess_risk_divergence(pi, pi_prime, h0: Hypothesis, hypotheses, p: int = 2) -> float:
    """Lower estimate of ``sup_h [dR_h0(pi, h) - dR_h0(pi', h)]`` over the given hypotheses.

    ``dR_h0(pi, h) = R(pi, h) - R(pi, h0)``.
    """
    base = _risk(pi, h0, p) - _risk(pi_prime, h0, p)
    best = -math.inf
    for h in hypotheses:
        val = (_risk(pi, h, p) - _risk(pi_prime, h, p)) - base
        best = max(best, val)
    if best == -math.inf:
        raise InvalidArgument("need at least one hypothesis")
    return best


def random_hypotheses(k: int, d: int, R: float, count: int, seed: int = 0, around: Hypothesis | None = None,
                      scale: float = 0.1):
    """Hypotheses uniform in the R-ball, or Gaussian perturbations of ``around``."""
    from .frequencies import make_rng

    rng = make_rng(seed)
    out = []
    for _ in range(count):
        if around is None:
            z = rng.standard_normal((k, d))
            z /= np.linalg.norm(z, axis=1, keepdims=True)
            C = z * (R * rng.uniform(0, 1, k) ** (1.0 / d))[:, None]
        else:
            C = around.centroids + scale * rng.standard_normal(around.centroids.shape)
        out.append(Hypothesis(C))
    return out


# --------------------------------------------------------------------------
# bound calculators


@dataclass
class BiasBounds:
    W_4eps: float
    W_2eps: float
    dist_to_class: float
    C: dict
    C_prime: dict
    C_A: dict
    bound_kmedians: dict
    bound_kmeans: dict


def clustering_bias_bounds(pi_star: MixtureModel, eps: float, R: float, k: int, delta: float,
                           nu: float = 0.0) -> BiasBounds:
    """Bias bounds for a k-mixture of Diracs with both published constant variants.

    ``C['500']`` uses ``500 R/eps``; ``C['224']`` uses ``224 (2R)/eps``.  The
    k-means bound uses ``d^2 + C' d`` with ``C' = 4 C R``.
    """
    if not 0 < delta < 1:
        raise InvalidArgument("delta must lie in (0, 1)")
    if nu < 0:
        raise InvalidArgument("nu must be nonnegative")
    h = pi_star.hypothesis
    alphas = h.alphas
    Rstar = float(np.max(np.linalg.norm(h.centroids, axis=1)))

    def W(radius):
        iso = set(isolated_set(h, radius))
        return float(sum(a for i, a in enumerate(alphas) if i not in iso))

    W4, W2 = W(4 * eps), W(2 * eps)
    dist = separated_cover(h, 2 * eps, Rstar).distance
    root = math.sqrt(k * math.log(math.e * k) * (1 + delta) / (1 - delta))
    C = {
        "500": 1.0 + (2 + nu) * 500.0 * root * R / eps,
        "224": 1.0 + (2 + nu) * 224.0 * root * 2.0 * R / eps,
    }
    Cp = {key: 4.0 * val * R for key, val in C.items()}
    CA = {p: 56.0 * math.sqrt(k / (1 - delta)) * (2 * R) ** p for p in (1, 2)}
    bmed = {key: val * min(W4 * dist, W2 * 2 * eps) for key, val in C.items()}
    bmean = {
        key: min(W4 * (dist**2 + Cp[key] * dist), W2 * (4 * eps**2 + 2 * Cp[key] * eps)) for key in C
    }
    return BiasBounds(W4, W2, dist, C, Cp, CA, bmed, bmean)


def gmm_C_A(k: int, d: int, s: float, R: float, delta: float) -> float:
    """Stability constant for shared-covariance Gaussian mixtures."""
    return 46.0 * math.sqrt(k / (1 - delta)) * R**2 * (1 + 2 / s**2) ** (d / 4)


def recommended_sketch_size(task, k: int, d: int, eps: float, R: float, s: float, delta: float, zeta: float,
                            universal_C: float) -> int:
    """Sufficient sketch size from the closed-form bounds, given the universal constant."""
    if universal_C <= 0:
        raise InvalidArgument("universal_C must be positive")
    if not (0 < delta < 1 and 0 < zeta < 1):
        raise InvalidArgument("delta and zeta must lie in (0, 1)")
    if R < eps:
        raise InvalidArgument("the bound requires R >= eps")
    task = str(task).lower()
    lek = math.log(math.e * k)
    if task in ("kmeans", "kmedians", "clustering", "dirac"):
        core = k**2 * d * (1 + math.log(k * d) + math.log(R / eps) + math.log(1 / delta)) + k * math.log(1 / zeta)
        val = universal_C * delta**-2 * core * lek * min(lek, d)
    elif task in ("gmm", "gauss", "gaussian"):
        core = k * d * (d / s**2 + 1 + math.log(k * R * s) + math.log(1 / delta)) + math.log(1 / zeta)
        val = universal_C * delta**-2 * k * core * min(lek**2, s**2 * lek) * (1 + 2 / s**2) ** (d / 2)
    else:
        raise InvalidArgument(f"unknown task {task!r}")
    return int(math.ceil(val))
