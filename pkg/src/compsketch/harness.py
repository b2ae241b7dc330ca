"""Synthetic data, baselines, end-to-end runs and phase-transition sweeps."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp

from .decoder import DecodeConfig, decode, decode_gmm
from .errors import InfeasibleSeparation, InvalidArgument
from .frequencies import FREQ_VERSION, derive_seed, make_rng, sample_frequencies
from .models import Family, Hypothesis, KernelParams, sigma_star
from .risk import clustering_risk, gmm_nll
from .sketching import SKETCH_VERSION, finalize, sketch_stream

MAX_PACKING_ATTEMPTS = 1000
S_POLICIES = ("s2=2", "s2=d", "s2=d/log(ek)")


# --------------------------------------------------------------------------
# synthetic data


@dataclass
class SyntheticData:
    X: np.ndarray
    labels: np.ndarray
    truth: Hypothesis
    seed: int


def separated_centroids(k: int, d: int, min_dist: float, R: float, rng, sigma_chol=None) -> np.ndarray:
    """k points in the R-ball (family metric) with pairwise distance >= ``min_dist``.

    Points are placed one at a time, each redrawn up to ``MAX_PACKING_ATTEMPTS``
    times until it clears the ones already placed.
    """
    L = np.eye(d) if sigma_chol is None else np.asarray(sigma_chol, dtype=np.float64)
    Z = np.zeros((0, d))
    for _ in range(k):
        for _ in range(MAX_PACKING_ATTEMPTS):
            z = rng.standard_normal(d)
            z *= R * rng.uniform() ** (1.0 / d) / np.linalg.norm(z)
            if Z.shape[0] == 0 or np.min(np.linalg.norm(Z - z, axis=1)) >= min_dist:
                Z = np.vstack([Z, z])
                break
        else:
            raise InfeasibleSeparation(
                f"could not place {k} centroids {min_dist}-apart in a radius-{R} ball "
                f"after {MAX_PACKING_ATTEMPTS} attempts"
            )
    return Z @ L.T


def generate_synthetic(task, k: int, d: int, n: int, eps: float, R: float, balance="uniform", noise: float = 0.0,
                       seed: int = 0, sigma_chol=None) -> SyntheticData:
    """Separated ground truth plus samples.

    Clustering: samples sit on the centroids, optionally with isotropic
    Gaussian noise of standard deviation ``noise``.  GMM: exact draws from
    the mixture with covariance ``L L^T``.  ``balance`` is ``"uniform"``,
    ``"random"`` (Dirichlet weights) or an explicit weight vector.
    """
    task = str(task).lower()
    if task not in ("kmeans", "kmedians", "gmm"):
        raise InvalidArgument(f"unknown task {task!r}")
    rng = make_rng(seed)
    L = np.eye(d) if sigma_chol is None else np.asarray(sigma_chol, dtype=np.float64)
    C = separated_centroids(k, d, 2.0 * eps, R, rng, L if task == "gmm" else None)
    if isinstance(balance, str):
        if balance == "uniform":
            alphas = np.full(k, 1.0 / k)
        elif balance == "random":
            alphas = rng.dirichlet(np.ones(k))
        else:
            raise InvalidArgument(f"unknown balance {balance!r}")
    else:
        alphas = np.asarray(balance, dtype=np.float64)
    labels = rng.choice(k, size=int(n), p=alphas)
    X = C[labels]
    if task == "gmm":
        X = X + rng.standard_normal((n, d)) @ L.T
    elif noise > 0:
        X = X + noise * rng.standard_normal((n, d))
    return SyntheticData(X, labels, Hypothesis(C, alphas), int(seed))


# --------------------------------------------------------------------------
# baselines


def _kmeanspp(X, k, rng):
    n = X.shape[0]
    centres = [X[rng.integers(n)]]
    d2 = np.sum((X - centres[0]) ** 2, axis=1)
    for _ in range(1, k):
        tot = d2.sum()
        idx = rng.integers(n) if tot <= 0 else rng.choice(n, p=d2 / tot)
        centres.append(X[idx])
        d2 = np.minimum(d2, np.sum((X - X[idx]) ** 2, axis=1))
    return np.array(centres)


@dataclass
class BaselineResult:
    hypothesis: Hypothesis
    objective: float
    iterations: int


def lloyd_kmeans(X, k: int, restarts: int = 20, seed: int = 0, max_iter: int = 300, tol: float = 1e-12) -> BaselineResult:
    """Lloyd's algorithm with k-means++ seeding; best inertia over restarts."""
    X = np.asarray(X, dtype=np.float64)
    best = None
    for r in range(restarts):
        rng = make_rng(derive_seed(seed, r))
        C = _kmeanspp(X, k, rng)
        it = 0
        for it in range(1, max_iter + 1):
            d2 = np.sum((X[:, None] - C[None]) ** 2, -1)
            lab = np.argmin(d2, axis=1)
            C_new = C.copy()
            for l in range(k):
                mask = lab == l
                if np.any(mask):
                    C_new[l] = X[mask].mean(axis=0)
            shift = np.max(np.abs(C_new - C))
            C = C_new
            if shift <= tol:
                break
        d2 = np.sum((X[:, None] - C[None]) ** 2, -1)
        lab = np.argmin(d2, axis=1)
        obj = float(np.mean(d2[np.arange(X.shape[0]), lab]))
        if best is None or obj < best.objective:
            alphas = np.bincount(lab, minlength=k) / X.shape[0]
            best = BaselineResult(Hypothesis(C, alphas), obj, it)
    return best


def em_gmm(X, k: int, sigma_chol, restarts: int = 20, seed: int = 0, max_iter: int = 500, tol: float = 1e-10) -> BaselineResult:
    """EM for a k-mixture with known shared covariance; best likelihood over restarts."""
    from scipy.linalg import solve_triangular

    X = np.asarray(X, dtype=np.float64)
    L = np.asarray(sigma_chol, dtype=np.float64)
    Z = solve_triangular(L, X.T, lower=True).T
    n = X.shape[0]
    best = None
    for r in range(restarts):
        rng = make_rng(derive_seed(seed, r))
        M = _kmeanspp(Z, k, rng)
        logw = np.full(k, -math.log(k))
        prev = -math.inf
        it = 0
        for it in range(1, max_iter + 1):
            logp = logw[None, :] - 0.5 * np.sum((Z[:, None] - M[None]) ** 2, -1)
            norm = logsumexp(logp, axis=1)
            ll = float(np.mean(norm))
            resp = np.exp(logp - norm[:, None])
            Nk = resp.sum(axis=0) + 1e-300
            M = (resp.T @ Z) / Nk[:, None]
            logw = np.log(Nk / n)
            if ll - prev <= tol * max(1.0, abs(ll)):
                break
            prev = ll
        h = Hypothesis(M @ L.T, np.exp(logw) / np.exp(logw).sum())
        obj = gmm_nll(X, h, L @ L.T).risk
        if best is None or obj < best.objective:
            best = BaselineResult(h, obj, it)
    return best


def match_centroids(truth, estimate, metric=None):
    """Optimal assignment of estimated to true centroids; returns (perm, per-centroid errors)."""
    A = truth.centroids if isinstance(truth, Hypothesis) else np.asarray(truth)
    B = estimate.centroids if isinstance(estimate, Hypothesis) else np.asarray(estimate)
    if metric is not None:
        A, B = metric.whiten(A), metric.whiten(B)
    D = np.sqrt(np.sum((A[:, None] - B[None]) ** 2, -1))
    rows, cols = linear_sum_assignment(D)
    perm = np.empty(A.shape[0], dtype=int)
    perm[rows] = cols
    return perm, D[rows, cols]


# --------------------------------------------------------------------------
# configuration


@dataclass
class ExperimentConfig:
    """Sweep / pipeline settings.

    Distinct true centroids are at least ``2 eps`` apart inside a ball of
    radius ``R_factor * eps * max(1, k/2)^(1/d)``.  For clustering
    ``s = s_ratio * eps``; for GMM ``s`` follows ``s_policy``.
    """

    task: str = "kmeans"
    k_values: list = field(default_factory=lambda: [3])
    d_values: list = field(default_factory=lambda: [2])
    n: int = 2000
    m_grid: list = field(default_factory=lambda: [4, 8, 16, 32, 64])
    eps: float = 1.0
    R_factor: float = 3.0
    s_ratio: float = 1.0
    s_policy: str = "s2=d"
    trials: int = 5
    tolerance: float = 0.1
    seed: int = 0
    restarts: int = 3
    baseline: bool = False
    out: str = "phase.csv"
    timings_out: str = "phase_times.csv"

    def __post_init__(self):
        self.task = str(self.task).lower()
        if self.task not in ("kmeans", "kmedians", "gmm"):
            raise InvalidArgument(f"unknown task {self.task!r}")
        for name in ("k_values", "d_values", "m_grid"):
            vals = [int(v) for v in getattr(self, name)]
            if not vals or min(vals) < 1:
                raise InvalidArgument(f"{name} must be a non-empty list of positive integers")
            setattr(self, name, vals)
        if not 0 < self.tolerance <= 1:
            raise InvalidArgument("tolerance must lie in (0, 1]")
        if self.s_policy not in S_POLICIES:
            raise InvalidArgument(f"s_policy must be one of {S_POLICIES}")
        if self.trials < 1 or self.n < 1:
            raise InvalidArgument("trials and n must be positive")

    @classmethod
    def from_mapping(cls, data: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise InvalidArgument(f"unknown configuration keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_toml(cls, path) -> "ExperimentConfig":
        return cls.from_mapping(load_toml(path))

    def radius(self, k: int, d: int) -> float:
        """Ball radius, grown as ``(k/2)^(1/d)`` so that k separated centroids fit."""
        return self.R_factor * self.eps * max(1.0, k / 2.0) ** (1.0 / d)

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def load_toml(path) -> dict:
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def scale_for(task: str, k: int, d: int, eps: float, cfg: ExperimentConfig) -> float:
    if task != "gmm":
        return cfg.s_ratio * eps
    if cfg.s_policy == "s2=2":
        return math.sqrt(2.0)
    if cfg.s_policy == "s2=d":
        return math.sqrt(d)
    return math.sqrt(d / math.log(math.e * k))


def cell_params(task: str, k: int, d: int, cfg: ExperimentConfig) -> KernelParams:
    if task == "gmm":
        s = scale_for(task, k, d, cfg.eps, cfg)
        return KernelParams(Family.GAUSS, d, s, cfg.eps)
    return KernelParams(Family.DIRAC, d, scale_for(task, k, d, cfg.eps, cfg), cfg.eps)


# --------------------------------------------------------------------------
# pipeline


@dataclass
class PipelineResult:
    success: bool
    centroid_error: float
    decoded: Hypothesis
    truth: Hypothesis
    risk: float | None
    baseline_risk: float | None
    residual: float
    converged: bool
    freq_hash: str
    seed: int
    times: dict


def run_pipeline(task: str, k: int, d: int, m: int, cfg: ExperimentConfig, seed: int) -> PipelineResult:
    """Frequencies, sketch, decode and evaluate one synthetic instance."""
    task = str(task).lower()
    times = {}
    p = cell_params(task, k, d, cfg)
    R = cfg.radius(k, d)
    t0 = time.perf_counter()
    data = generate_synthetic(task, k, d, cfg.n, cfg.eps, R, seed=derive_seed(seed, 0),
                              sigma_chol=p.sigma_chol if task == "gmm" else None)
    times["generate"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    fs = sample_frequencies(p, m, derive_seed(seed, 1))
    times["frequencies"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    y = finalize(sketch_stream(fs, data.X))
    times["sketch"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    dcfg = DecodeConfig(k, cfg.eps, R, seed=derive_seed(seed, 2), restarts=cfg.restarts)
    res = (decode_gmm if task == "gmm" else decode)(fs, p, y, dcfg)
    times["decode"] = time.perf_counter() - t0
    _, errs = match_centroids(data.truth, res.hypothesis, p if task == "gmm" else None)
    err = float(errs.max())
    risk = base = None
    if cfg.baseline:
        t0 = time.perf_counter()
        if task == "gmm":
            risk = gmm_nll(data.X, res.hypothesis, p.covariance).risk
            base = em_gmm(data.X, k, p.sigma_chol, seed=derive_seed(seed, 3)).objective
        else:
            pw = 2 if task == "kmeans" else 1
            risk = clustering_risk(data.X, res.hypothesis, pw).risk
            bl = lloyd_kmeans(data.X, k, seed=derive_seed(seed, 3))
            base = clustering_risk(data.X, bl.hypothesis, pw).risk
        times["baseline"] = time.perf_counter() - t0
    return PipelineResult(err <= cfg.tolerance * cfg.eps, err, res.hypothesis, data.truth, risk, base,
                          res.residual_norm, res.converged, fs.content_hash.hex(), int(seed), times)


# --------------------------------------------------------------------------
# phase diagram


@dataclass
class PhaseResult:
    rows: list
    transitions: dict
    slope: float
    intercept: float
    r2: float
    csv_text: str
    timings_text: str


def transition_point(m_grid, rates, level: float = 0.5):
    """First sketch size whose success rate reaches ``level`` (None if never)."""
    for m, r in zip(m_grid, rates):
        if r >= level:
            return m
    return None


def _linear_fit(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    slope, intercept = np.polyfit(x, y, 1)
    pred = slope * x + intercept
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def phase_diagram(cfg: ExperimentConfig, write: bool = True, stop_after: int | None = 2) -> PhaseResult:
    """Success rate over the (k, d, m) grid.

    Each (k, d) column walks up the m grid.  With ``stop_after`` set, once
    that many consecutive cells reach full success the remaining larger m are
    recorded as successes without running (their outcome is implied by the
    monotone trend; the CSV marks them ``extrapolated=1``).
    """
    rows, times, transitions = [], [], {}
    for k in cfg.k_values:
        for d in cfg.d_values:
            rates = []
            streak = 0
            for mi, m in enumerate(cfg.m_grid):
                cell_seed = derive_seed(cfg.seed, k, d, mi)
                if stop_after is not None and streak >= stop_after:
                    rows.append((k, d, k * d, m, cfg.trials, cfg.trials, 1.0, 1))
                    rates.append(1.0)
                    continue
                wins = 0
                t0 = time.perf_counter()
                for t in range(cfg.trials):
                    res = run_pipeline(cfg.task, k, d, m, cfg, derive_seed(cell_seed, t))
                    wins += int(res.success)
                times.append((k, d, m, time.perf_counter() - t0))
                rate = wins / cfg.trials
                rates.append(rate)
                rows.append((k, d, k * d, m, cfg.trials, wins, rate, 0))
                streak = streak + 1 if rate == 1.0 else 0
            transitions[(k, d)] = transition_point(cfg.m_grid, rates)
    pts = [(k * d, mstar) for (k, d), mstar in transitions.items() if mstar is not None]
    if len(pts) >= 2 and len({x for x, _ in pts}) >= 2:
        slope, intercept, r2 = _linear_fit(*zip(*pts))
    else:
        slope = intercept = r2 = float("nan")

    buf = io.StringIO()
    meta = {
        "task": cfg.task,
        "seed": cfg.seed,
        "config_sha256": cfg.digest(),
        "freq_format": FREQ_VERSION,
        "sketch_format": SKETCH_VERSION,
        "k_values": " ".join(map(str, cfg.k_values)),
        "d_values": " ".join(map(str, cfg.d_values)),
        "m_grid": " ".join(map(str, cfg.m_grid)),
        "trials": cfg.trials,
        "tolerance": cfg.tolerance,
    }
    for key, val in meta.items():
        buf.write(f"# {key}={val}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["k", "d", "kd", "m", "trials", "successes", "success_rate", "extrapolated"])
    for r in rows:
        w.writerow([r[0], r[1], r[2], r[3], r[4], r[5], f"{r[6]:.6f}", r[7]])
    tbuf = io.StringIO()
    tw = csv.writer(tbuf, lineterminator="\n")
    tw.writerow(["k", "d", "m", "seconds"])
    for r in times:
        tw.writerow([r[0], r[1], r[2], f"{r[3]:.4f}"])
    if write:
        Path(cfg.out).write_text(buf.getvalue())
        Path(cfg.timings_out).write_text(tbuf.getvalue())
    return PhaseResult(rows, transitions, slope, intercept, r2, buf.getvalue(), tbuf.getvalue())
