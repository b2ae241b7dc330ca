"""Core value types: kernel parameters, hypotheses and mixture models."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument

SIMPLEX_TOL = 1e-12


class Family(enum.IntEnum):
    """Base distribution of the location family (values are file codes)."""

    DIRAC = 0
    GAUSS = 1

    @classmethod
    def parse(cls, value) -> "Family":
        if isinstance(value, Family):
            return value
        if isinstance(value, (int, np.integer)):
            return cls(int(value))
        key = str(value).strip().lower()
        if key in ("dirac", "diracweighted", "clustering", "kmeans", "kmedians"):
            return cls.DIRAC
        if key in ("gauss", "gaussian", "gaussianplain", "gmm"):
            return cls.GAUSS
        raise InvalidArgument(f"unknown family {value!r}")

    @property
    def label(self) -> str:
        return "dirac" if self is Family.DIRAC else "gaussian"


def sigma_star(k: int) -> float:
    """Critical normalized bandwidth 1 / (4 sqrt(log(e k)))."""
    if k < 1:
        raise InvalidArgument("k must be a positive integer")
    return 1.0 / (4.0 * math.sqrt(math.log(math.e * k)))


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class KernelParams:
    """Scale ``s``, separation ``eps`` and covariance factor of a location family.

    ``sigma_chol`` is the lower Cholesky factor L of the component covariance
    (Sigma = L L^T).  For the Dirac family it is forced to the identity.
    """

    family: Family
    d: int
    s: float
    eps: float
    sigma_chol: np.ndarray = field(default=None)

    def __post_init__(self):
        fam = Family.parse(self.family)
        object.__setattr__(self, "family", fam)
        d = int(self.d)
        if d < 1:
            raise InvalidArgument("dimension d must be >= 1")
        object.__setattr__(self, "d", d)
        for name in ("s", "eps"):
            v = float(getattr(self, name))
            if not math.isfinite(v) or v <= 0:
                raise InvalidArgument(f"{name} must be a positive finite real, got {v}")
            object.__setattr__(self, name, v)
        if fam is Family.DIRAC or self.sigma_chol is None:
            L = np.eye(d)
        else:
            L = np.asarray(self.sigma_chol, dtype=np.float64)
            if L.shape != (d, d):
                raise InvalidArgument(f"sigma_chol must be {d}x{d}, got {L.shape}")
            if np.any(np.triu(L, 1) != 0):
                raise InvalidArgument("sigma_chol must be lower triangular")
            diag = np.diag(L)
            if not np.all(np.isfinite(L)) or np.any(diag <= 0):
                raise InvalidArgument("sigma_chol must have a strictly positive diagonal")
        object.__setattr__(self, "sigma_chol", _readonly(L))

    @classmethod
    def for_separation(cls, family, d: int, k: int, s: float, sigma_chol=None) -> "KernelParams":
        """Parameters with eps tied to s so that sigma(s)/eps equals sigma_star(k)."""
        fam = Family.parse(family)
        p = cls(fam, d, s, 1.0, sigma_chol)
        return cls(fam, d, s, p.sigma_scale / sigma_star(k), p.sigma_chol)

    def replace(self, **changes) -> "KernelParams":
        kw = dict(family=self.family, d=self.d, s=self.s, eps=self.eps, sigma_chol=self.sigma_chol)
        kw.update(changes)
        return KernelParams(**kw)

    def __eq__(self, other):
        if not isinstance(other, KernelParams):
            return NotImplemented
        return (
            self.family == other.family
            and self.d == other.d
            and self.s == other.s
            and self.eps == other.eps
            and np.array_equal(self.sigma_chol, other.sigma_chol)
        )

    __hash__ = None

    @property
    def sigma_scale(self) -> float:
        """Kernel width sigma(s) in the family's native metric."""
        if self.family is Family.DIRAC:
            return self.s
        return math.sqrt(2.0 + self.s**2)

    @property
    def bandwidth(self) -> float:
        """Normalized bandwidth sigma(s)/eps in rescaled units."""
        return self.sigma_scale / self.eps

    @property
    def p0_norm_sq(self) -> float:
        """Squared kernel norm of the base distribution."""
        if self.family is Family.DIRAC:
            return 1.0 / (4.0 + 2.0 / self.d)
        return (1.0 + 2.0 / self.s**2) ** (-self.d / 2.0)

    @property
    def covariance(self) -> np.ndarray:
        return self.sigma_chol @ self.sigma_chol.T

    def whiten(self, x: np.ndarray) -> np.ndarray:
        """Map points so that Euclidean distance equals the family metric.

        Identity for Diracs; ``L^{-1} x`` for Gaussians.  Works on the last axis.
        """
        x = np.asarray(x, dtype=np.float64)
        if self.family is Family.DIRAC:
            return x
        from scipy.linalg import solve_triangular

        flat = x.reshape(-1, self.d).T
        out = solve_triangular(self.sigma_chol, flat, lower=True)
        return out.T.reshape(x.shape)

    def metric(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Euclidean (Dirac) or Mahalanobis (Gaussian) distance along the last axis."""
        diff = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
        return np.linalg.norm(self.whiten(diff), axis=-1)


@dataclass(frozen=True, eq=False)
class Hypothesis:
    """k centroids with mixture weights on the simplex.

    Exact repetitions of centroids are allowed.
    """

    centroids: np.ndarray
    alphas: np.ndarray = field(default=None)

    def __post_init__(self):
        C = np.asarray(self.centroids, dtype=np.float64)
        if C.ndim == 1:
            C = C[None, :]
        if C.ndim != 2 or C.shape[0] < 1 or C.shape[1] < 1:
            raise InvalidArgument(f"centroids must be a non-empty k x d matrix, got shape {C.shape}")
        if not np.all(np.isfinite(C)):
            raise InvalidArgument("centroids must be finite")
        k = C.shape[0]
        if self.alphas is None:
            a = np.full(k, 1.0 / k)
        else:
            a = np.asarray(self.alphas, dtype=np.float64).reshape(-1)
            if a.shape != (k,):
                raise InvalidArgument(f"expected {k} weights, got {a.shape[0]}")
            if not np.all(np.isfinite(a)) or np.any(a < -SIMPLEX_TOL):
                raise InvalidArgument("weights must be nonnegative")
            total = a.sum()
            if abs(total - 1.0) > SIMPLEX_TOL * max(1, k):
                raise InvalidArgument(f"weights must sum to 1 (got {total!r})")
            a = np.clip(a, 0.0, None)
            a = a / a.sum()
        object.__setattr__(self, "centroids", _readonly(C))
        object.__setattr__(self, "alphas", _readonly(a))

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def d(self) -> int:
        return self.centroids.shape[1]

    def __eq__(self, other):
        if not isinstance(other, Hypothesis):
            return NotImplemented
        return np.array_equal(self.centroids, other.centroids) and np.array_equal(self.alphas, other.alphas)

    __hash__ = None

    def permuted(self, order) -> "Hypothesis":
        order = np.asarray(order)
        return Hypothesis(self.centroids[order], self.alphas[order])


@dataclass(frozen=True, eq=False)
class MixtureModel:
    """Weighted mixture of Diracs or of Gaussians sharing one covariance."""

    hypothesis: Hypothesis
    params: KernelParams

    def __post_init__(self):
        if self.hypothesis.d != self.params.d:
            raise InvalidArgument(
                f"hypothesis dimension {self.hypothesis.d} does not match params dimension {self.params.d}"
            )

    @property
    def family(self) -> Family:
        return self.params.family

    @property
    def centroids(self) -> np.ndarray:
        return self.hypothesis.centroids

    @property
    def alphas(self) -> np.ndarray:
        return self.hypothesis.alphas
