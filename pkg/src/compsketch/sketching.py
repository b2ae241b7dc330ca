"""Feature maps, mergeable streaming sketches and closed-form sketches of mixtures."""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import CorruptFile, EmptySketch, IncompatibleSketch, InvalidArgument, UnsupportedFormat
from .frequencies import FrequencySet
from .models import Family, Hypothesis, KernelParams

SKETCH_MAGIC = b"CSKS"
SKETCH_VERSION = 1
_HEADER = struct.Struct("<4sI32sIQ")
DEFAULT_CHUNK = 4096


def _as_points(fs: FrequencySet, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1:] != (fs.d,):
        raise InvalidArgument(f"points must have dimension {fs.d}, got shape {x.shape}")
    return x


def _phases(fs: FrequencySet, x: np.ndarray) -> np.ndarray:
    t = x @ fs.omegas.T
    return np.cos(t) + 1j * np.sin(t)


def feature_map(fs: FrequencySet, x) -> np.ndarray:
    """``exp(j omega_j^T x) / (sqrt(m) w_j)``; a batch of points gives one row each."""
    x = _as_points(fs, x)
    return _phases(fs, x) * (fs.amplitudes / math.sqrt(fs.m))


def atom_amplitudes(fs: FrequencySet, p: KernelParams | None = None) -> np.ndarray:
    """Modulus of ``A(pi_c)`` per frequency (before 1/sqrt(m))."""
    p = fs.params if p is None else p
    if p.family is Family.DIRAC:
        return fs.amplitudes
    proj = fs.omegas @ p.sigma_chol  # rows L^T omega
    return np.exp(-0.5 * np.sum(proj**2, axis=1)) * fs.amplitudes


def atom_embedding(fs: FrequencySet, p: KernelParams | None, c) -> np.ndarray:
    """Sketch of a single component located at ``c`` (Dirac or Gaussian)."""
    p = fs.params if p is None else p
    if p.d != fs.d:
        raise InvalidArgument("kernel parameters and frequency set differ in dimension")
    c = _as_points(fs, c)
    return _phases(fs, c) * (atom_amplitudes(fs, p) / math.sqrt(fs.m))


def sketch_of_mixture(fs: FrequencySet, p: KernelParams | None, h: Hypothesis) -> np.ndarray:
    """``sum_l alpha_l A(pi_{c_l})``."""
    if not isinstance(h, Hypothesis):
        h = Hypothesis(*h)
    atoms = atom_embedding(fs, p, h.centroids)
    return h.alphas @ atoms


def _two_sum(a: np.ndarray, b: np.ndarray):
    s = a + b
    bb = s - a
    err = (a - (s - bb)) + (b - bb)
    return s, err


@dataclass(frozen=True, eq=False)
class Sketch:
    """Unnormalized running sum of weighted Fourier features plus a sample count.

    ``acc`` holds interleaved (re, im) partial sums, ``comp`` the running
    compensation of the Neumaier summation.
    """

    freq_hash: bytes
    m: int
    acc: np.ndarray
    comp: np.ndarray
    n: int

    @classmethod
    def empty(cls, fs: FrequencySet) -> "Sketch":
        return cls(fs.content_hash, fs.m, np.zeros(2 * fs.m), np.zeros(2 * fs.m), 0)

    @property
    def sum(self) -> np.ndarray:
        tot = self.acc + self.comp
        return tot[0::2] + 1j * tot[1::2]

    def add_block(self, block_sum: np.ndarray, count: int) -> "Sketch":
        part = np.empty(2 * self.m)
        part[0::2] = block_sum.real
        part[1::2] = block_sum.imag
        s, err = _two_sum(self.acc, part)
        return Sketch(self.freq_hash, self.m, s, self.comp + err, self.n + int(count))

    def __eq__(self, other):
        if not isinstance(other, Sketch):
            return NotImplemented
        return (
            self.freq_hash == other.freq_hash
            and self.n == other.n
            and np.array_equal(self.acc + self.comp, other.acc + other.comp)
        )

    __hash__ = None


def _chunks(data, chunk: int, d: int):
    if isinstance(data, np.ndarray):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[None, :]
        for i in range(0, arr.shape[0], chunk):
            yield arr[i : i + chunk]
        return
    buf = []
    for row in data:
        row = np.asarray(row, dtype=np.float64)
        if row.ndim == 2:
            if buf:
                yield np.array(buf)
                buf = []
            for i in range(0, row.shape[0], chunk):
                yield row[i : i + chunk]
            continue
        buf.append(row)
        if len(buf) >= chunk:
            yield np.array(buf)
            buf = []
    if buf:
        yield np.array(buf)


def update(sk: Sketch, fs: FrequencySet, data, chunk: int = DEFAULT_CHUNK) -> Sketch:
    """Fold more samples into ``sk``."""
    if sk.freq_hash != fs.content_hash:
        raise IncompatibleSketch("sketch was built with a different frequency set")
    chunk = max(1, int(chunk))
    amp = fs.amplitudes
    for block in _chunks(data, chunk, fs.d):
        block = _as_points(fs, block)
        if block.shape[0] == 0:
            continue
        block_sum = np.sum(_phases(fs, block), axis=0) * amp
        sk = sk.add_block(block_sum, block.shape[0])
    return sk


def sketch_stream(fs: FrequencySet, data: Iterable, chunk: int = DEFAULT_CHUNK) -> Sketch:
    """Sketch a dataset given as an array or any iterable of vectors / row blocks."""
    return update(Sketch.empty(fs), fs, data, chunk)


def merge(a: Sketch, b: Sketch) -> Sketch:
    if a.freq_hash != b.freq_hash or a.m != b.m:
        raise IncompatibleSketch("cannot merge sketches built from different frequency sets")
    s, err = _two_sum(a.acc, b.acc)
    return Sketch(a.freq_hash, a.m, s, a.comp + b.comp + err, a.n + b.n)


def finalize(sk: Sketch) -> np.ndarray:
    """Normalized sketch ``y = sum / (n sqrt(m))``."""
    if sk.n == 0:
        raise EmptySketch("cannot finalize a sketch with no samples")
    return sk.sum / (sk.n * math.sqrt(sk.m))


def sketch_to_bytes(sk: Sketch) -> bytes:
    head = _HEADER.pack(SKETCH_MAGIC, SKETCH_VERSION, sk.freq_hash, sk.m, sk.n)
    payload = head + np.ascontiguousarray(sk.acc + sk.comp, dtype="<f8").tobytes()
    return payload + hashlib.sha256(payload).digest()


def sketch_from_bytes(raw: bytes) -> Sketch:
    if len(raw) < _HEADER.size + 32:
        raise UnsupportedFormat("sketch file is empty or truncated")
    magic, version, fhash, m, n = _HEADER.unpack_from(raw, 0)
    if magic != SKETCH_MAGIC:
        raise UnsupportedFormat(f"bad magic {magic!r}, expected {SKETCH_MAGIC!r}")
    if version != SKETCH_VERSION:
        raise UnsupportedFormat(f"unsupported sketch file version {version}")
    if len(raw) != _HEADER.size + 16 * m + 32:
        raise UnsupportedFormat("sketch file length does not match its header")
    if hashlib.sha256(raw[:-32]).digest() != raw[-32:]:
        raise CorruptFile("sketch file digest mismatch")
    acc = np.frombuffer(raw, "<f8", 2 * m, _HEADER.size).astype(np.float64)
    return Sketch(bytes(fhash), m, acc, np.zeros(2 * m), n)


def save_sketch(sk: Sketch, path) -> None:
    Path(path).write_bytes(sketch_to_bytes(sk))


def load_sketch(path) -> Sketch:
    return sketch_from_bytes(Path(path).read_bytes())
