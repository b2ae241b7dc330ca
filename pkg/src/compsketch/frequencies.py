"""Frequency sets for random Fourier sketching, and their binary file format.

Random draws use numpy's Philox4x64 counter-based generator seeded with the
set's 64-bit seed, so a stored seed replays the same frequencies on any
platform running the same numpy bit generator.

For the weighted Dirac family the frequency density is proportional to
``w(omega)^2 exp(-s^2 |omega|^2 / 2)`` with ``w(omega) = 1 + s^2 |omega|^2 / d``.
Writing ``t = s^2 |omega|^2``, the law of ``t`` is the mixture
``p1 chi2_d + p2 chi2_{d+2} + p3 chi2_{d+4}`` with weights proportional to
``(1, 2, 1 + 2/d)``; the direction of omega is uniform on the sphere.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import solve_triangular

from .errors import CorruptFile, InvalidArgument, UnsupportedFormat
from .models import Family, KernelParams

FREQ_MAGIC = b"CSKF"
FREQ_VERSION = 1
_HEADER = struct.Struct("<4sIBIIdd")


def make_rng(seed: int) -> np.random.Generator:
    """Philox-backed generator for a 64-bit unsigned seed."""
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise InvalidArgument("seed must be a 64-bit unsigned integer")
    return np.random.Generator(np.random.Philox(seed))


def derive_seed(seed: int, *path: int) -> int:
    """Child seed for an independent stream (restart, trial, grid cell...)."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(p) for p in path))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def radial_mixture_weights(d: int) -> np.ndarray:
    """Mixture weights of the chi-square components of ``s^2 |omega|^2``."""
    w = np.array([1.0, 2.0, (d + 2.0) / d])
    return w / (4.0 + 2.0 / d)


def dirac_weight(omegas: np.ndarray, s: float) -> np.ndarray:
    d = omegas.shape[1]
    return 1.0 + s**2 * np.sum(omegas**2, axis=1) / d


@dataclass(frozen=True, eq=False)
class FrequencySet:
    params: KernelParams
    omegas: np.ndarray
    weights: np.ndarray
    seed: int

    def __post_init__(self):
        om = np.array(self.omegas, dtype=np.float64, copy=True)
        wt = np.array(self.weights, dtype=np.float64, copy=True)
        if om.ndim != 2 or om.shape[0] < 1 or om.shape[1] != self.params.d:
            raise InvalidArgument(f"omegas must be m x {self.params.d} with m >= 1")
        if wt.shape != (om.shape[0],) or np.any(wt < 1.0):
            raise InvalidArgument("weights must have one entry >= 1 per frequency")
        if self.params.family is Family.DIRAC:
            if not np.allclose(wt, dirac_weight(om, self.params.s), rtol=1e-12, atol=0):
                raise InvalidArgument("Dirac weights must equal 1 + s^2 |omega|^2 / d")
        elif np.any(wt != 1.0):
            raise InvalidArgument("Gaussian-family weights must all be 1")
        om.setflags(write=False)
        wt.setflags(write=False)
        object.__setattr__(self, "omegas", om)
        object.__setattr__(self, "weights", wt)
        object.__setattr__(self, "seed", int(self.seed))
        payload = _encode_payload(self)
        object.__setattr__(self, "_payload", payload)
        object.__setattr__(self, "content_hash", hashlib.sha256(payload).digest())

    @property
    def m(self) -> int:
        return self.omegas.shape[0]

    @property
    def d(self) -> int:
        return self.params.d

    @property
    def amplitudes(self) -> np.ndarray:
        """Per-frequency modulus of a point feature before the 1/sqrt(m) factor."""
        return 1.0 / self.weights

    def to_bytes(self) -> bytes:
        return self._payload + self.content_hash

    def __eq__(self, other):
        if not isinstance(other, FrequencySet):
            return NotImplemented
        return self.content_hash == other.content_hash

    __hash__ = None


def _encode_payload(fs: FrequencySet) -> bytes:
    p = fs.params
    head = _HEADER.pack(FREQ_MAGIC, FREQ_VERSION, int(p.family), p.d, fs.m, p.s, p.eps)
    body = [
        head,
        np.ascontiguousarray(p.sigma_chol, dtype="<f8").tobytes(),
        struct.pack("<Q", fs.seed),
        np.ascontiguousarray(fs.omegas, dtype="<f8").tobytes(),
        np.ascontiguousarray(fs.weights, dtype="<f8").tobytes(),
    ]
    return b"".join(body)


def _check_m(m) -> int:
    m = int(m)
    if m < 1:
        raise InvalidArgument("number of frequencies m must be >= 1")
    return m


def sample_dirac_frequencies(d: int, m: int, s: float, seed: int, eps: float | None = None) -> FrequencySet:
    """Draw ``m`` frequencies from the weighted Dirac design at scale ``s``.

    ``eps`` defaults to the separation matched to k = 1.
    """
    m = _check_m(m)
    if eps is None:
        params = KernelParams.for_separation(Family.DIRAC, d, 1, s)
    else:
        params = KernelParams(Family.DIRAC, d, s, eps)
    d = params.d
    rng = make_rng(seed)
    comp = rng.choice(3, size=m, p=radial_mixture_weights(d))
    t = rng.chisquare(d + 2.0 * comp)
    direction = rng.standard_normal((m, d))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    omegas = direction * (np.sqrt(t) / params.s)[:, None]
    return FrequencySet(params, omegas, dirac_weight(omegas, params.s), seed)


def sample_gauss_frequencies(p: KernelParams, m: int, seed: int) -> FrequencySet:
    """Draw ``m`` frequencies i.i.d. from ``N(0, s^-2 Sigma^-1)``; unit weights."""
    m = _check_m(m)
    if p.family is not Family.GAUSS:
        raise InvalidArgument("sample_gauss_frequencies requires the Gaussian family")
    L = p.sigma_chol
    if np.any(np.abs(np.diag(L)) < 1e-300):
        raise InvalidArgument("singular Cholesky factor")
    rng = make_rng(seed)
    z = rng.standard_normal((m, p.d))
    omegas = solve_triangular(L.T, z.T / p.s, lower=False).T
    return FrequencySet(p, omegas, np.ones(m), seed)


def sample_frequencies(p: KernelParams, m: int, seed: int) -> FrequencySet:
    """Draw from the design matching ``p.family``."""
    if p.family is Family.DIRAC:
        return sample_dirac_frequencies(p.d, m, p.s, seed, eps=p.eps)
    return sample_gauss_frequencies(p, m, seed)


def save_frequencies(fs: FrequencySet, path) -> None:
    Path(path).write_bytes(fs.to_bytes())


def frequencies_from_bytes(raw: bytes) -> FrequencySet:
    if len(raw) < _HEADER.size + 32:
        raise UnsupportedFormat("frequency file is empty or truncated")
    magic, version, fam, d, m, s, eps = _HEADER.unpack_from(raw, 0)
    if magic != FREQ_MAGIC:
        raise UnsupportedFormat(f"bad magic {magic!r}, expected {FREQ_MAGIC!r}")
    if version != FREQ_VERSION:
        raise UnsupportedFormat(f"unsupported frequency file version {version}")
    expected = _HEADER.size + 8 * d * d + 8 + 8 * m * d + 8 * m + 32
    if len(raw) != expected:
        raise UnsupportedFormat(f"frequency file has {len(raw)} bytes, expected {expected}")
    payload, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(payload).digest() != digest:
        raise CorruptFile("frequency file digest mismatch")
    off = _HEADER.size
    L = np.frombuffer(raw, "<f8", d * d, off).reshape(d, d)
    off += 8 * d * d
    (seed,) = struct.unpack_from("<Q", raw, off)
    off += 8
    omegas = np.frombuffer(raw, "<f8", m * d, off).reshape(m, d)
    off += 8 * m * d
    weights = np.frombuffer(raw, "<f8", m, off)
    try:
        family = Family(fam)
    except ValueError as exc:
        raise UnsupportedFormat(f"unknown family code {fam}") from exc
    params = KernelParams(family, d, s, eps, L)
    fs = FrequencySet(params, omegas, weights, seed)
    if fs.content_hash != digest:
        raise CorruptFile("frequency payload does not re-encode to the stored digest")
    return fs


def load_frequencies(path) -> FrequencySet:
    return frequencies_from_bytes(Path(path).read_bytes())
