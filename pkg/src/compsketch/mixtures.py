"""Separated mixtures, dipoles and empirical coherence of the normalized kernel.

Distances in this module are *rescaled*: Euclidean (Diracs) or Mahalanobis
(Gaussians) divided by ``eps``, so that a 2-separated mixture has distinct
components at least ``2 eps`` apart in the native metric.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument
from .frequencies import make_rng
from .kernels import coherence_constants, kernel_matrix
from .models import Family, Hypothesis, KernelParams, MixtureModel, sigma_star

SEP_TOL = 1e-12


# --------------------------------------------------------------------------
# separation


@dataclass
class SeparationReport:
    ok: bool
    pair_violations: list = field(default_factory=list)
    norm_violations: list = field(default_factory=list)

    def __bool__(self):
        return self.ok


def _whitener(metric):
    if metric is None:
        return lambda x: np.asarray(x, dtype=np.float64)
    if isinstance(metric, KernelParams):
        return metric.whiten
    L = np.asarray(metric, dtype=np.float64)
    from scipy.linalg import solve_triangular

    return lambda x: solve_triangular(L, np.asarray(x, dtype=np.float64).T, lower=True).T


def separation_check(h: Hypothesis, eps: float, R: float, metric=None, factor: float = 2.0) -> SeparationReport:
    """Check membership of ``h`` in the class of ``factor*eps``-separated, ``R``-bounded centroids.

    ``metric`` is None (Euclidean), a lower Cholesky factor of Sigma, or a
    :class:`KernelParams` whose metric is used.  Exact repetitions are allowed.
    """
    C = _whitener(metric)(h.centroids)
    need = factor * eps
    pairs = []
    k = C.shape[0]
    for i in range(k):
        for j in range(i + 1, k):
            if np.array_equal(h.centroids[i], h.centroids[j]):
                continue
            dist = float(np.linalg.norm(C[i] - C[j]))
            if dist < need:
                pairs.append((i, j, dist))
    norms = np.linalg.norm(C, axis=1)
    bad_norms = [(i, float(nrm)) for i, nrm in enumerate(norms) if nrm > R]
    return SeparationReport(not pairs and not bad_norms, pairs, bad_norms)


# --------------------------------------------------------------------------
# dipoles


@dataclass(frozen=True, eq=False)
class Dipole:
    """Signed measure ``alpha1 pi_theta1 - alpha2 pi_theta2`` with theta's 1-close."""

    theta1: np.ndarray
    theta2: np.ndarray
    alpha1: float
    alpha2: float
    params: KernelParams

    def __post_init__(self):
        t1 = np.asarray(self.theta1, dtype=np.float64).reshape(-1)
        t2 = np.asarray(self.theta2, dtype=np.float64).reshape(-1)
        if t1.shape != (self.params.d,) or t2.shape != (self.params.d,):
            raise InvalidArgument("dipole locations must be d-vectors")
        if self.alpha1 < 0 or self.alpha2 < 0:
            raise InvalidArgument("dipole weights must be nonnegative")
        if rescaled_distance(self.params, t1, t2) > 1.0 + SEP_TOL:
            raise InvalidArgument("dipole locations must be within rescaled distance 1")
        object.__setattr__(self, "theta1", t1)
        object.__setattr__(self, "theta2", t2)
        object.__setattr__(self, "alpha1", float(self.alpha1))
        object.__setattr__(self, "alpha2", float(self.alpha2))

    @classmethod
    def monopole(cls, theta, alpha: float, params: KernelParams, sign: int = 1) -> "Dipole":
        if sign >= 0:
            return cls(theta, theta, alpha, 0.0, params)
        return cls(theta, theta, 0.0, alpha, params)

    @property
    def is_monopole(self) -> bool:
        return self.alpha1 == 0.0 or self.alpha2 == 0.0

    def atoms(self):
        """(locations, signed weights) of the nonzero parts."""
        locs, w = [], []
        if self.alpha1 > 0:
            locs.append(self.theta1)
            w.append(self.alpha1)
        if self.alpha2 > 0:
            locs.append(self.theta2)
            w.append(-self.alpha2)
        return locs, w


def rescaled_distance(p: KernelParams, a, b) -> float:
    return float(p.metric(a, b)) / p.eps


def _merge_duplicates(tau: MixtureModel):
    locs, weights = [], []
    for c, a in zip(tau.centroids, tau.alphas):
        for i, l in enumerate(locs):
            if np.array_equal(l, c):
                weights[i] += a
                break
        else:
            locs.append(np.array(c))
            weights.append(float(a))
    return locs, weights


def _check_two_separated(p: KernelParams, locs, label):
    for i in range(len(locs)):
        for j in range(i + 1, len(locs)):
            if rescaled_distance(p, locs[i], locs[j]) < 2.0 - SEP_TOL:
                raise InvalidArgument(f"{label} is not 2-separated (components {i}, {j})")


def decompose_into_dipoles(tau: MixtureModel, tau_prime: MixtureModel) -> list:
    """Write ``tau - tau_prime`` as a sum of pairwise 1-separated dipoles.

    Each component of ``tau`` pairs with the nearest component of
    ``tau_prime`` within rescaled distance 1 (lowest index on ties); the rest
    become monopoles.  Repeated centroids are merged first.
    """
    p = tau.params
    if tau_prime.params != p:
        raise InvalidArgument("mixtures must share kernel parameters")
    locs, w = _merge_duplicates(tau)
    locs_p, w_p = _merge_duplicates(tau_prime)
    _check_two_separated(p, locs, "tau")
    _check_two_separated(p, locs_p, "tau_prime")
    used = [False] * len(locs_p)
    out = []
    for theta, a in zip(locs, w):
        best, best_dist = None, math.inf
        for j, theta_p in enumerate(locs_p):
            if used[j]:
                continue
            dist = rescaled_distance(p, theta, theta_p)
            if dist <= 1.0 and dist < best_dist:
                best, best_dist = j, dist
        if best is None:
            if a > 0:
                out.append(Dipole.monopole(theta, a, p))
        else:
            used[best] = True
            if a > 0 or w_p[best] > 0:
                out.append(Dipole(theta, locs_p[best], a, w_p[best], p))
    for j, (theta_p, a_p) in enumerate(zip(locs_p, w_p)):
        if not used[j] and a_p > 0:
            out.append(Dipole.monopole(theta_p, a_p, p, sign=-1))
    return out


def dipoles_to_signed_measure(dipoles) -> tuple:
    """Stack dipoles into (locations, signed weights)."""
    locs, w = [], []
    for nu in dipoles:
        l, ww = nu.atoms()
        locs.extend(l)
        w.extend(ww)
    if not locs:
        return np.zeros((0, dipoles[0].params.d if dipoles else 0)), np.zeros(0)
    return np.array(locs), np.array(w)


def dipole_mmd(nu: Dipole) -> float:
    """Kernel norm of a dipole."""
    p = nu.params
    n0 = p.p0_norm_sq
    u = rescaled_distance(p, nu.theta1, nu.theta2)
    # (a1 - a2)^2 + 2 a1 a2 (1 - K(u)) avoids cancellation for close pairs
    one_minus_k = -math.expm1(-(u**2) / (2.0 * p.bandwidth**2))
    sq = n0 * ((nu.alpha1 - nu.alpha2) ** 2 + 2.0 * nu.alpha1 * nu.alpha2 * one_minus_k)
    return math.sqrt(max(sq, 0.0))


def dipoles_are_separated(dipoles, separation: float = 1.0) -> bool:
    for i in range(len(dipoles)):
        li, _ = dipoles[i].atoms()
        for j in range(i + 1, len(dipoles)):
            lj, _ = dipoles[j].atoms()
            for a in li:
                for b in lj:
                    if rescaled_distance(dipoles[i].params, a, b) < separation - SEP_TOL:
                        return False
    return True


def ell_coherence_ratio(dipoles) -> float:
    """``||sum nu_l||^2 / sum ||nu_l||^2`` for pairwise 1-separated dipoles."""
    dipoles = list(dipoles)
    if not dipoles:
        raise InvalidArgument("need at least one dipole")
    if not dipoles_are_separated(dipoles):
        raise InvalidArgument("dipoles are not pairwise 1-separated")
    denom = sum(dipole_mmd(nu) ** 2 for nu in dipoles)
    if denom <= 0:
        raise InvalidArgument("all dipoles have zero kernel norm")
    if len(dipoles) == 1:
        return 1.0
    p = dipoles[0].params
    diag = denom
    cross = 0.0
    blocks = [nu.atoms() for nu in dipoles]
    for i in range(len(blocks)):
        for j in range(i + 1, len(blocks)):
            li, wi = blocks[i]
            lj, wj = blocks[j]
            if not li or not lj:
                continue
            K = kernel_matrix(p, np.array(li), np.array(lj))
            cross += 2.0 * float(np.array(wi) @ K @ np.array(wj))
    return (diag + cross) / denom


# --------------------------------------------------------------------------
# mutual coherence search


def _norm_sq(a1, a2, u, sigma):
    one_minus_k = -np.expm1(-(u**2) / (2.0 * sigma**2))
    return (a1 - a2) ** 2 + 2.0 * a1 * a2 * one_minus_k


def _pair_coherence(X, A, sigma):
    """Normalized kernel between two dipoles, batched.

    X: (B, 4, d) locations (theta1, theta2, theta1', theta2'); A: (B, 4) weights.
    """
    signs = np.array([1.0, -1.0])
    d12 = np.linalg.norm(X[:, 0] - X[:, 1], axis=-1)
    d34 = np.linalg.norm(X[:, 2] - X[:, 3], axis=-1)
    n1 = _norm_sq(A[:, 0], A[:, 1], d12, sigma)
    n2 = _norm_sq(A[:, 2], A[:, 3], d34, sigma)
    num = np.zeros(X.shape[0])
    for i in range(2):
        for j in range(2):
            dist = np.linalg.norm(X[:, i] - X[:, 2 + j], axis=-1)
            num += signs[i] * signs[j] * A[:, i] * A[:, 2 + j] * np.exp(-(dist**2) / (2.0 * sigma**2))
    with np.errstate(divide="ignore", invalid="ignore"):
        return num / np.sqrt(n1 * n2)


def _project(X, A, separation):
    """Push a batch of configurations back into the feasible set."""
    A = np.clip(A, 0.0, 1.0)
    for blk in (slice(0, 2), slice(2, 4)):
        sub = A[:, blk]
        top = sub.max(axis=1, keepdims=True)
        dead = top[:, 0] <= 1e-9
        sub = np.where(top > 1e-9, sub / np.maximum(top, 1e-300), sub)
        sub[dead, 0] = 1.0
        A[:, blk] = sub
    X = X.copy()
    for a, b in ((0, 1), (2, 3)):
        diff = X[:, b] - X[:, a]
        dist = np.linalg.norm(diff, axis=-1)
        over = dist > 1.0
        if np.any(over):
            mid = 0.5 * (X[over, a] + X[over, b])
            unit = diff[over] / dist[over, None]
            X[over, a] = mid - 0.5 * unit
            X[over, b] = mid + 0.5 * unit
    # rigid translation of the second dipole away from the first, by the
    # smallest multiple (found by bisection) that clears every cross distance
    def min_cross(Y):
        out = np.full(Y.shape[0], np.inf)
        for i in range(2):
            for j in range(2):
                out = np.minimum(out, np.linalg.norm(Y[:, 2 + j] - Y[:, i], axis=-1))
        return out

    short = min_cross(X) < separation
    if np.any(short):
        Xs = X[short]
        axis = 0.5 * (Xs[:, 2] + Xs[:, 3] - Xs[:, 0] - Xs[:, 1])
        nrm = np.linalg.norm(axis, axis=-1)
        axis = np.where(nrm[:, None] > 1e-12, axis / np.maximum(nrm, 1e-300)[:, None], 0.0)
        axis[nrm <= 1e-12, 0] = 1.0

        def shifted(t):
            Y = Xs.copy()
            Y[:, 2:] += (t[:, None] * axis)[:, None, :]
            return Y

        lo = np.zeros(Xs.shape[0])
        hi = np.full(Xs.shape[0], separation)
        while True:
            bad = min_cross(shifted(hi)) < separation
            if not np.any(bad):
                break
            hi = np.where(bad, 2.0 * hi, hi)
        for _ in range(50):
            mid = 0.5 * (lo + hi)
            ok = min_cross(shifted(mid)) >= separation
            hi = np.where(ok, mid, hi)
            lo = np.where(ok, lo, mid)
        X[short] = shifted(hi)
    return X, A


def _feasible(X, A, separation):
    ok = np.linalg.norm(X[:, 0] - X[:, 1], axis=-1) <= 1.0 + 1e-9
    ok &= np.linalg.norm(X[:, 2] - X[:, 3], axis=-1) <= 1.0 + 1e-9
    for i in range(2):
        for j in range(2):
            ok &= np.linalg.norm(X[:, i] - X[:, 2 + j], axis=-1) >= separation - 1e-9
    ok &= (A[:, :2].max(axis=1) > 0) & (A[:, 2:].max(axis=1) > 0)
    return ok


@dataclass
class CoherenceMeasurement:
    max_observed: float
    bound: float
    argmax: dict
    trials: int
    separation: float

    @property
    def within_bound(self) -> bool:
        return self.max_observed <= self.bound


def measure_mutual_coherence(
    p: KernelParams,
    k: int,
    trials: int = 64,
    seed: int = 0,
    iters: int = 150,
    separation: float = 1.0,
) -> CoherenceMeasurement:
    """Multi-start projected gradient ascent of ``|kappa(mu, mu')|`` over separated dipole pairs.

    Works with the normalized kernel in rescaled coordinates; the reported
    maximum is an empirical lower estimate of the true mutual coherence.
    """
    sigma = p.bandwidth
    if sigma > sigma_star(k) * (1 + 1e-12):
        raise InvalidArgument(f"bandwidth {sigma} exceeds sigma_star({k}) = {sigma_star(k)}")
    bound = coherence_constants(p, k).mutual_coherence_bound
    d = p.d
    rng = make_rng(seed)
    B = int(trials)

    def unit(n):
        v = rng.standard_normal((n, d))
        return v / np.linalg.norm(v, axis=1, keepdims=True)

    X = np.zeros((B, 4, d))
    # half the starts are near-degenerate dipoles, where the normalized
    # kernel behaves like a derivative and coherence tends to peak
    tight = np.arange(B) % 2 == 0
    u1 = np.where(tight, 10.0 ** rng.uniform(-3, 0, B), rng.uniform(0, 1, B))[:, None]
    u2 = np.where(tight, 10.0 ** rng.uniform(-3, 0, B), rng.uniform(0, 1, B))[:, None]
    v1, v2, v3 = unit(B), unit(B), unit(B)
    # tight pairs start at the separation boundary, loose ones further out
    gap = np.where(tight, separation + 0.5 * (u1 + u2)[:, 0] + rng.uniform(0, 0.05, B),
                   separation + 1.0 + rng.uniform(0, 1.0, B))
    centre = v3 * gap[:, None]
    X[:, 0] = -0.5 * u1 * v1
    X[:, 1] = 0.5 * u1 * v1
    X[:, 2] = centre - 0.5 * u2 * v2
    X[:, 3] = centre + 0.5 * u2 * v2
    A = rng.uniform(0, 1, (B, 4))
    near_one = 1.0 - 10.0 ** rng.uniform(-3, 0, (B, 2))
    A[tight, 0] = 1.0
    A[tight, 1] = near_one[tight, 0]
    A[tight, 2] = 1.0
    A[tight, 3] = near_one[tight, 1]
    X, A = _project(X, A, separation)

    def objective(X, A):
        val = np.abs(_pair_coherence(X, A, sigma))
        with np.errstate(divide="ignore"):
            return np.where(np.isfinite(val) & (val > 0), np.log(val), -np.inf)

    f = objective(X, A)
    step = np.full(B, 0.1)
    n_par = 4 * d + 4
    h = 1e-6
    for _ in range(int(iters)):
        theta = np.concatenate([X.reshape(B, -1), A], axis=1)
        grad = np.zeros_like(theta)
        for q in range(n_par):
            tp = theta.copy()
            tm = theta.copy()
            tp[:, q] += h
            tm[:, q] -= h
            fp = objective(tp[:, : 4 * d].reshape(B, 4, d), tp[:, 4 * d :])
            fm = objective(tm[:, : 4 * d].reshape(B, 4, d), tm[:, 4 * d :])
            g = (fp - fm) / (2 * h)
            grad[:, q] = np.where(np.isfinite(g), g, 0.0)
        gnorm = np.linalg.norm(grad, axis=1)
        direction = grad / np.maximum(gnorm, 1e-300)[:, None]
        cand = theta + step[:, None] * direction
        Xc, Ac = _project(cand[:, : 4 * d].reshape(B, 4, d), cand[:, 4 * d :], separation)
        fc = objective(Xc, Ac)
        accept = (fc > f) & _feasible(Xc, Ac, separation)
        X = np.where(accept[:, None, None], Xc, X)
        A = np.where(accept[:, None], Ac, A)
        f = np.where(accept, fc, f)
        step = np.where(accept, np.minimum(step * 1.5, 1.0), step * 0.5)
        if np.all(step < 1e-10):
            break

    feasible = _feasible(X, A, separation)
    vals = np.where(feasible, np.abs(_pair_coherence(X, A, sigma)), -np.inf)
    vals = np.where(np.isfinite(vals), vals, -np.inf)
    best = int(np.argmax(vals))
    argmax = {
        "locations": (X[best] - 0.5 * (X[best, 0] + X[best, 1])).tolist(),
        "weights": A[best].tolist(),
        "monopole_first": bool(min(A[best, 0], A[best, 1]) == 0),
        "monopole_second": bool(min(A[best, 2], A[best, 3]) == 0),
    }
    return CoherenceMeasurement(float(max(vals[best], 0.0)), bound, argmax, B, separation)


# --------------------------------------------------------------------------
# hypothesis JSON


def _num(x: float) -> str:
    x = float(x)
    if not math.isfinite(x):
        raise InvalidArgument("cannot serialize non-finite numbers")
    return format(x, ".17g")


def hypothesis_to_json(h: Hypothesis, family, eps: float, R: float) -> str:
    """Canonical JSON with fixed field order and 17 significant digits."""
    fam = Family.parse(family)
    rows = ",".join("[" + ",".join(_num(v) for v in row) + "]" for row in h.centroids)
    alphas = ",".join(_num(a) for a in h.alphas)
    return (
        "{"
        f'"family":"{fam.label}",'
        f'"d":{h.d},'
        f'"k":{h.k},'
        f'"centroids":[{rows}],'
        f'"alphas":[{alphas}],'
        f'"eps":{_num(eps)},'
        f'"R":{_num(R)}'
        "}"
    )


def hypothesis_from_json(text: str):
    """Parse canonical hypothesis JSON; returns (Hypothesis, metadata dict)."""
    obj = json.loads(text)
    C = np.array(obj["centroids"], dtype=np.float64).reshape(int(obj["k"]), int(obj["d"]))
    h = Hypothesis(C, np.array(obj["alphas"], dtype=np.float64))
    meta = {"family": Family.parse(obj["family"]), "eps": float(obj["eps"]), "R": float(obj["R"])}
    return h, meta
