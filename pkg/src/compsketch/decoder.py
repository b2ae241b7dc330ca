"""Greedy continuous decoder: fit a k-component hypothesis to a sketch.

The decoder minimizes ``|| y - sum_l alpha_l a(c_l) ||_2`` over centroids in
a ball and weights on the simplex, where ``a(c)`` is the sketch of a single
component (a Dirac feature vector or a Gaussian embedding).  It follows the
greedy-with-replacement pattern: add up to ``max_atoms`` atoms one at a
time, refining all of them after each addition, then remove the lightest
atom repeatedly (refining in between) until ``k`` remain, and refine again.
Atom norms do not depend on the location for either family, so ranking
candidates by raw correlation equals ranking by normalized correlation.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .errors import InvalidArgument
from .frequencies import FrequencySet, derive_seed, make_rng
from .models import Family, Hypothesis, KernelParams
from .sketching import atom_amplitudes


# --------------------------------------------------------------------------
# simplex-constrained least squares


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)."""
    v = np.asarray(v, dtype=np.float64)
    n = v.size
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, n + 1)
    rho = np.nonzero(u - css / ind > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def _kkt_polish(G, b, support):
    """Minimize the quadratic on the face spanned by ``support``; None if it leaves the simplex."""
    S = np.flatnonzero(support)
    n = S.size
    M = np.zeros((n + 1, n + 1))
    M[:n, :n] = 2.0 * G[np.ix_(S, S)]
    M[:n, n] = 1.0
    M[n, :n] = 1.0
    rhs = np.concatenate([2.0 * b[S], [1.0]])
    sol, *_ = np.linalg.lstsq(M, rhs, rcond=None)
    a = np.zeros(b.size)
    a[S] = sol[:n]
    if np.any(a[S] < 0):
        return None
    return a


def _stationarity(G, b, a):
    g = 2.0 * (G @ a - b)
    L = max(2.0 * float(np.linalg.eigvalsh(G)[-1]), 1e-300)
    return float(np.linalg.norm(a - project_simplex(a - g / L)) * L)


def simplex_least_squares(G, b, alpha0=None, tol: float = 1e-10, max_iter: int = 5000) -> np.ndarray:
    """Minimize ``a^T G a - 2 b^T a`` over the probability simplex.

    Accelerated projected gradient, followed by an exact solve on the
    detected support; the polished point is kept only when it is feasible and
    at least as good.
    """
    G = np.asarray(G, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n = b.size
    if n == 1:
        return np.ones(1)

    def obj(a):
        return float(a @ G @ a - 2.0 * b @ a)

    # warm start: try the previous support first
    if alpha0 is not None:
        a0 = project_simplex(np.asarray(alpha0, dtype=np.float64))
        cand = _kkt_polish(G, b, a0 > 0)
        if cand is not None and _stationarity(G, b, cand) <= tol:
            return cand
    else:
        a0 = np.full(n, 1.0 / n)
    L = 2.0 * float(np.linalg.eigvalsh(G)[-1])
    if L <= 0:
        return a0
    x = a0.copy()
    yk = x.copy()
    t = 1.0
    for _ in range(max_iter):
        g = 2.0 * (G @ yk - b)
        x_new = project_simplex(yk - g / L)
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        yk = x_new + ((t - 1.0) / t_new) * (x_new - x)
        if obj(yk) > obj(x_new):
            # adaptive restart keeps the iteration monotone
            yk = x_new.copy()
            t_new = 1.0
        step = np.linalg.norm(x_new - x)
        x, t = x_new, t_new
        if step * L <= tol:
            break
    cand = _kkt_polish(G, b, x > 1e-12)
    if cand is not None and obj(cand) <= obj(x) + 1e-15 * max(1.0, abs(obj(x))):
        x = cand
    x = np.maximum(x, 0.0)
    return x / x.sum()


# --------------------------------------------------------------------------
# atoms and objective


class _AtomModel:
    """Sketches of single components ``amp * exp(j Omega c) / sqrt(m)``."""

    def __init__(self, fs: FrequencySet, p: KernelParams):
        if p.d != fs.d:
            raise InvalidArgument("kernel parameters and frequency set differ in dimension")
        self.fs = fs
        self.p = p
        self.omega = fs.omegas
        self.amp = atom_amplitudes(fs, p) / math.sqrt(fs.m)

    def atoms(self, C: np.ndarray) -> np.ndarray:
        """(K, m) complex matrix, one atom per row."""
        t = np.atleast_2d(C) @ self.omega.T
        return (np.cos(t) + 1j * np.sin(t)) * self.amp

    @property
    def atom_norm(self) -> float:
        return float(np.linalg.norm(self.amp))

    def gram(self, A, y):
        G = (A.conj() @ A.T).real
        b = (A.conj() @ y).real
        return G, b


def _check_sketch(fs: FrequencySet, y) -> np.ndarray:
    y = np.asarray(y, dtype=np.complex128).reshape(-1)
    if y.size != fs.m:
        raise InvalidArgument(f"sketch has {y.size} entries, frequency set has m={fs.m}")
    if not np.all(np.isfinite(y)):
        raise InvalidArgument("sketch contains non-finite values")
    return y


def proxy_objective(fs: FrequencySet, p: KernelParams, y, C, alpha):
    """``||y - sum alpha_l a(c_l)||^2`` and its gradients with respect to C and alpha."""
    model = _AtomModel(fs, p)
    y = _check_sketch(fs, y)
    C = np.atleast_2d(np.asarray(C, dtype=np.float64))
    alpha = np.asarray(alpha, dtype=np.float64)
    A = model.atoms(C)
    r = y - alpha @ A
    f = float(np.vdot(r, r).real)
    # d a_lj / d c_l = j omega_j a_lj
    grad_C = 2.0 * alpha[:, None] * (np.imag(r.conj()[None, :] * A) @ model.omega)
    grad_a = -2.0 * (A.conj() @ r).real
    return f, grad_C, grad_a


def proxy_value(fs: FrequencySet, p: KernelParams, y, h: Hypothesis, optimize_weights: bool | None = None) -> float:
    """Sketch-domain residual of a hypothesis.

    For clustering (Dirac family) the weights are optimized over the simplex;
    for mixtures the weights of ``h`` are used as given.
    """
    y = _check_sketch(fs, y)
    if optimize_weights is None:
        optimize_weights = p.family is Family.DIRAC
    model = _AtomModel(fs, p)
    A = model.atoms(h.centroids)
    if optimize_weights:
        G, b = model.gram(A, y)
        alpha = simplex_least_squares(G, b)
    else:
        alpha = h.alphas
    return float(np.linalg.norm(y - alpha @ A))


# --------------------------------------------------------------------------
# configuration and results


@dataclass(frozen=True)
class DecodeConfig:
    k: int
    eps: float
    R: float
    max_atoms: int | None = None
    local_iters: int = 30
    global_iters: int = 300
    grad_tol: float = 1e-8
    step_tol: float = 1e-10
    restarts: int = 3
    candidates: int = 256
    polish_top: int = 4
    seed: int = 0
    enforce_separation: bool = False

    def __post_init__(self):
        k = int(self.k)
        if k < 1:
            raise InvalidArgument("k must be >= 1")
        object.__setattr__(self, "k", k)
        if self.max_atoms is None:
            object.__setattr__(self, "max_atoms", 2 * k)
        if self.max_atoms < k:
            raise InvalidArgument("max_atoms must be >= k")
        if not (self.eps > 0 and self.R > 0):
            raise InvalidArgument("eps and R must be positive")
        if not (self.grad_tol > 0 and self.step_tol > 0):
            raise InvalidArgument("tolerances must be positive")
        if self.restarts < 1 or self.candidates < 1 or self.polish_top < 1:
            raise InvalidArgument("restarts, candidates and polish_top must be >= 1")


@dataclass
class DecodeResult:
    hypothesis: Hypothesis
    residual_norm: float
    trace: list = field(default_factory=list)
    converged: bool = False
    restart: int = 0
    global_trace: list = field(default_factory=list)


# --------------------------------------------------------------------------
# the greedy decoder


class _Decoder:
    def __init__(self, fs, p, y, cfg: DecodeConfig):
        self.model = _AtomModel(fs, p)
        self.p = p
        self.y = y
        self.cfg = cfg
        self.d = p.d
        self.L = p.sigma_chol
        self.box = cfg.R * np.sqrt(np.sum(self.L**2, axis=1))

    # geometry ---------------------------------------------------------------
    def project_ball(self, C):
        C = np.atleast_2d(C)
        W = self.p.whiten(C)
        nrm = np.linalg.norm(W, axis=1)
        scale = np.where(nrm > self.cfg.R, self.cfg.R / np.maximum(nrm, 1e-300), 1.0)
        return (W * scale[:, None]) @ self.L.T

    def random_in_ball(self, rng, n):
        z = rng.standard_normal((n, self.d))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        z *= self.cfg.R * rng.uniform(0, 1, n)[:, None] ** (1.0 / self.d)
        return z @ self.L.T

    # weights ----------------------------------------------------------------
    def solve_alpha(self, C, alpha0=None):
        A = self.model.atoms(C)
        G, b = self.model.gram(A, self.y)
        a = simplex_least_squares(G, b, alpha0, tol=self.cfg.step_tol)
        r = self.y - a @ A
        return a, r, A

    # atom selection ---------------------------------------------------------
    def _correlation(self, C, r):
        return (self.model.atoms(C).conj() @ r).real

    def select_atom(self, r, rng):
        cfg = self.cfg
        cand = self.random_in_ball(rng, cfg.candidates)
        score = self._correlation(cand, r)
        order = np.argsort(-score)[: cfg.polish_top]
        om = self.model.omega
        amp = self.model.amp

        def f(c):
            ph = np.exp(-1j * (om @ c))
            z = ph * r  # conj(a) r, up to the amplitude
            val = -float(np.sum(amp * z.real))
            grad = -(om.T @ (amp * z.imag))
            return val, grad

        best_c, best_v = None, -np.inf
        bounds = [(-b, b) for b in self.box]
        for i in order:
            res = minimize(f, cand[i], jac=True, method="L-BFGS-B", bounds=bounds,
                           options={"maxiter": 200, "gtol": cfg.grad_tol})
            c = self.project_ball(res.x)[0]
            v = float(self._correlation(c[None, :], r)[0])
            if v > best_v:
                best_c, best_v = c, v
        return best_c

    # local refinement of all centroids (weights solved exactly) -------------
    def refine(self, C, alpha, iters, trace=None):
        K = C.shape[0]
        state = {"alpha": alpha}
        om = self.model.omega

        def f(x):
            Cx = x.reshape(K, self.d)
            a, r, A = self.solve_alpha(Cx, state["alpha"])
            state["alpha"] = a
            val = float(np.vdot(r, r).real)
            grad = 2.0 * a[:, None] * (np.imag(r.conj()[None, :] * A) @ om)
            return val, grad.ravel()

        def cb(xk):
            if trace is not None:
                a, r, _ = self.solve_alpha(xk.reshape(K, self.d), state["alpha"])
                trace.append(float(np.linalg.norm(r)))

        bounds = [(-b, b) for b in self.box] * K
        res = minimize(f, C.ravel(), jac=True, method="L-BFGS-B", bounds=bounds, callback=cb,
                       options={"maxiter": int(iters), "gtol": self.cfg.grad_tol,
                                "ftol": self.cfg.step_tol**2})
        C_new = self.project_ball(res.x.reshape(K, self.d))
        a, r, _ = self.solve_alpha(C_new, state["alpha"])
        return C_new, a, r, res

    # main loop --------------------------------------------------------------
    def run(self, seed):
        cfg = self.cfg
        rng = make_rng(seed)
        trace = []
        C = np.zeros((0, self.d))
        alpha = np.zeros(0)
        r = self.y.copy()
        for _ in range(cfg.max_atoms):
            c = self.select_atom(r, rng)
            if C.shape[0]:
                gap = np.min(self.p.metric(C, c[None, :]))
                if gap < 1e-6 * cfg.eps:
                    off = rng.standard_normal(self.d)
                    c = self.project_ball(c + 1e-3 * cfg.eps * off / np.linalg.norm(off))[0]
            C = np.vstack([C, c])
            alpha, r, _ = self.solve_alpha(C, np.append(alpha, 0.0) if alpha.size else None)
            C, alpha, r, _ = self.refine(C, alpha, cfg.local_iters)
            trace.append(float(np.linalg.norm(r)))
        # drop the lightest atom one at a time, refining after each removal
        while C.shape[0] > cfg.k:
            drop = int(np.argmin(alpha))
            C = np.delete(C, drop, axis=0)
            alpha, r, _ = self.solve_alpha(C)
            if C.shape[0] > cfg.k:
                C, alpha, r, _ = self.refine(C, alpha, cfg.local_iters)
        global_trace = []
        C, alpha, r, res = self.refine(C, alpha, cfg.global_iters, global_trace)
        trace.extend(global_trace)
        converged = bool(res.success) or float(np.max(np.abs(res.jac))) <= cfg.grad_tol
        if cfg.enforce_separation:
            from .risk import separated_cover

            cover = separated_cover(Hypothesis(C), 2.0 * cfg.eps, cfg.R, metric=self.p)
            C = cover.cover.centroids.copy()
            alpha, r, _ = self.solve_alpha(C)
        trace.append(float(np.linalg.norm(r)))
        return C, alpha, converged, trace, global_trace


def _decode(fs, p, y, cfg: DecodeConfig) -> DecodeResult:
    y = _check_sketch(fs, y)
    if fs.m < cfg.k:
        warnings.warn(f"sketch size m={fs.m} is smaller than k={cfg.k}; the problem is underdetermined",
                      RuntimeWarning, stacklevel=3)
    dec = _Decoder(fs, p, y, cfg)
    best = None
    for i in range(cfg.restarts):
        C, alpha, converged, trace, global_trace = dec.run(derive_seed(cfg.seed, i))
        h = Hypothesis(C, alpha)
        resid = float(np.linalg.norm(y - h.alphas @ dec.model.atoms(h.centroids)))
        if best is None or resid < best.residual_norm:
            best = DecodeResult(h, resid, trace, converged, i, global_trace)
    return best


def decode(fs: FrequencySet, p: KernelParams, y, cfg: DecodeConfig) -> DecodeResult:
    """Fit k centroids (and their cluster weights) to a clustering sketch."""
    return _decode(fs, p, y, cfg)


def decode_gmm(fs: FrequencySet, p: KernelParams, y, cfg: DecodeConfig) -> DecodeResult:
    """Fit the means and weights of a fixed-covariance Gaussian mixture to a sketch."""
    if p.family is not Family.GAUSS:
        raise InvalidArgument("decode_gmm requires Gaussian-family kernel parameters")
    return _decode(fs, p, y, cfg)
