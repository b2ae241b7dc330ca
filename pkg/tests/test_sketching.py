import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from compsketch import Family, Hypothesis, KernelParams
from compsketch.errors import CorruptFile, EmptySketch, IncompatibleSketch, InvalidArgument, UnsupportedFormat
from compsketch.frequencies import FrequencySet, sample_frequencies
from compsketch.sketching import (
    Sketch,
    atom_embedding,
    feature_map,
    finalize,
    load_sketch,
    merge,
    save_sketch,
    sketch_from_bytes,
    sketch_of_mixture,
    sketch_stream,
    sketch_to_bytes,
    update,
)

from conftest import random_chol


def naive_sketch(fs, X):
    out = np.zeros(fs.m, dtype=complex)
    for x in X:
        for j in range(fs.m):
            out[j] += np.exp(1j * fs.omegas[j] @ x) / fs.weights[j]
    return out / (len(X) * math.sqrt(fs.m))


@pytest.fixture
def fs2(dirac2):
    return sample_frequencies(dirac2, 64, 17)


class TestFeatureMap:
    def test_gauss_unit_norm(self, gauss2, rng):
        fs = sample_frequencies(gauss2, 100, 1)
        for x in rng.standard_normal((20, 2)) * 10:
            assert np.linalg.norm(feature_map(fs, x)) == pytest.approx(1.0, rel=1e-14)

    def test_zero_point(self, fs2):
        phi = feature_map(fs2, np.zeros(2))
        np.testing.assert_array_equal(phi.imag, 0.0)
        np.testing.assert_allclose(phi.real, 1 / (math.sqrt(64) * fs2.weights), rtol=1e-15)

    def test_half_turn(self):
        p = KernelParams(Family.GAUSS, 1, 1.0, 1.0)
        fs = FrequencySet(p, np.array([[math.pi]]), np.ones(1), 0)
        phi = feature_map(fs, np.array([1.0]))
        assert phi[0].real == pytest.approx(-1.0, abs=1e-15)
        assert abs(phi[0].imag) < 1e-15

    def test_dirac_norm_at_most_one(self, fs2, rng):
        for x in rng.standard_normal((20, 2)):
            assert np.linalg.norm(feature_map(fs2, x)) <= 1.0

    def test_dimension_mismatch(self, fs2):
        with pytest.raises(InvalidArgument):
            feature_map(fs2, np.zeros(3))


class TestStreaming:
    def test_single_sample(self, fs2, rng):
        x = rng.standard_normal(2)
        y = finalize(sketch_stream(fs2, x[None, :]))
        np.testing.assert_allclose(y, feature_map(fs2, x), rtol=1e-14, atol=1e-16)

    def test_matches_naive(self, rng):
        p = KernelParams(Family.DIRAC, 2, 0.5, 1.0)
        fs = sample_frequencies(p, 16, 4)
        X = rng.standard_normal((50, 2))
        np.testing.assert_allclose(finalize(sketch_stream(fs, X, chunk=7)), naive_sketch(fs, X), rtol=1e-12, atol=1e-15)

    def test_merge_halves(self, fs2, rng):
        X = rng.standard_normal((1000, 2))
        whole = finalize(sketch_stream(fs2, X))
        parts = merge(sketch_stream(fs2, X[:500]), sketch_stream(fs2, X[500:]))
        assert parts.n == 1000
        assert np.linalg.norm(finalize(parts) - whole) <= 1e-12 * np.linalg.norm(whole)

    def test_iterable_of_rows(self, fs2, rng):
        X = rng.standard_normal((37, 2))
        a = finalize(sketch_stream(fs2, iter(list(X)), chunk=5))
        b = finalize(sketch_stream(fs2, X))
        np.testing.assert_allclose(a, b, rtol=1e-13)

    def test_update_appends(self, fs2, rng):
        X = rng.standard_normal((30, 2))
        sk = update(sketch_stream(fs2, X[:10]), fs2, X[10:])
        assert sk.n == 30
        np.testing.assert_allclose(finalize(sk), finalize(sketch_stream(fs2, X)), rtol=1e-13)

    def test_merge_associative_commutative(self, fs2, rng):
        X = rng.standard_normal((3000, 2)) * 3
        for _ in range(10):
            cuts = np.sort(rng.choice(np.arange(1, 3000), size=3, replace=False))
            parts = [sketch_stream(fs2, chunk) for chunk in np.split(X, cuts)]
            a = merge(merge(parts[0], parts[1]), merge(parts[2], parts[3]))
            b = merge(parts[3], merge(parts[2], merge(parts[1], parts[0])))
            ref = finalize(sketch_stream(fs2, X))
            for s in (a, b):
                assert np.linalg.norm(finalize(s) - ref) <= 1e-12 * np.linalg.norm(ref)

    def test_magnitude_bound(self, fs2, rng):
        X = rng.standard_normal((200, 2)) * 0.01
        sk = sketch_stream(fs2, X)
        assert np.all(np.abs(sk.sum) <= sk.n / fs2.weights.min() * (1 + 1e-12))

    @given(st.integers(1, 40), st.floats(0.01, 100.0), st.integers(0, 1000))
    def test_finalize_norm_at_most_one(self, n, scale, seed):
        p = KernelParams(Family.DIRAC, 2, 0.5, 1.0)
        fs = sample_frequencies(p, 32, 1)
        X = np.random.default_rng(seed).standard_normal((n, 2)) * scale
        assert np.linalg.norm(finalize(sketch_stream(fs, X))) <= 1.0 + 1e-12

    def test_incompatible_merge(self, dirac2, fs2):
        other = sample_frequencies(dirac2, 64, 18)
        with pytest.raises(IncompatibleSketch):
            merge(Sketch.empty(fs2), Sketch.empty(other))
        with pytest.raises(IncompatibleSketch):
            update(Sketch.empty(fs2), other, np.zeros((1, 2)))

    def test_empty_finalize(self, fs2):
        with pytest.raises(EmptySketch):
            finalize(Sketch.empty(fs2))

    def test_hoeffding_rate(self, gauss2):
        p = KernelParams(Family.DIRAC, 2, 0.5, 1.0)
        fs = sample_frequencies(p, 64, 2)
        h = Hypothesis(np.array([[0.0, 0.0], [2.0, 1.0]]), [0.3, 0.7])
        target = sketch_of_mixture(fs, p, h)
        ns = [10**2, 10**3, 10**4, 10**5]
        errs = []
        rng = np.random.default_rng(0)
        for n in ns:
            e = []
            for _ in range(20):
                lab = rng.random(n) < 0.3
                X = np.where(lab[:, None], h.centroids[0], h.centroids[1])
                e.append(np.linalg.norm(finalize(sketch_stream(fs, X)) - target))
            errs.append(np.mean(e))
        slope = np.polyfit(np.log(ns), np.log(errs), 1)[0]
        assert -0.6 <= slope <= -0.4


class TestAtoms:
    def test_dirac_atom_is_feature(self, fs2, rng):
        c = rng.standard_normal(2)
        np.testing.assert_array_equal(atom_embedding(fs2, None, c), feature_map(fs2, c))

    def test_gauss_direct_substitution(self):
        p = KernelParams(Family.GAUSS, 2, 1.0, 1.0)
        fs = FrequencySet(p, np.array([[1.0, 1.0], [0.0, 0.5]]), np.ones(2), 0)
        psi = atom_embedding(fs, p, np.zeros(2))
        assert psi[0] == pytest.approx(math.exp(-1) / math.sqrt(2), rel=1e-15)
        assert psi[1] == pytest.approx(math.exp(-0.125) / math.sqrt(2), rel=1e-15)

    def test_gauss_mc(self, rng):
        L = random_chol(rng, 2, 0.7)
        p = KernelParams(Family.GAUSS, 2, 1.0, 1.0, L)
        fs = sample_frequencies(p, 8, 5)
        c = np.array([0.3, -1.1])
        X = c + rng.standard_normal((10**5, 2)) @ L.T
        feats = feature_map(fs, X)
        mean = feats.mean(axis=0)
        se_re = feats.real.std(axis=0, ddof=1) / math.sqrt(len(X))
        se_im = feats.imag.std(axis=0, ddof=1) / math.sqrt(len(X))
        psi = atom_embedding(fs, p, c)
        assert np.all(np.abs(mean.real - psi.real) <= 4 * se_re + 1e-15)
        assert np.all(np.abs(mean.imag - psi.imag) <= 4 * se_im + 1e-15)

    def test_mixture_single(self, fs2):
        c = np.array([[0.5, 0.5]])
        np.testing.assert_allclose(sketch_of_mixture(fs2, None, Hypothesis(c)), atom_embedding(fs2, None, c[0]))

    def test_mixture_permutation(self, fs2, rng):
        h = Hypothesis(rng.standard_normal((4, 2)), rng.dirichlet(np.ones(4)))
        a = sketch_of_mixture(fs2, None, h)
        b = sketch_of_mixture(fs2, None, h.permuted([2, 0, 3, 1]))
        np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-16)

    def test_mixture_linear_in_weights(self, fs2, rng):
        C = rng.standard_normal((3, 2))
        a1, a2 = rng.dirichlet(np.ones(3)), rng.dirichlet(np.ones(3))
        lhs = sketch_of_mixture(fs2, None, Hypothesis(C, 0.25 * a1 + 0.75 * a2))
        rhs = 0.25 * sketch_of_mixture(fs2, None, Hypothesis(C, a1)) + 0.75 * sketch_of_mixture(fs2, None, Hypothesis(C, a2))
        np.testing.assert_allclose(lhs, rhs, rtol=1e-13, atol=1e-16)

    def test_bad_weights(self, fs2):
        with pytest.raises(InvalidArgument):
            sketch_of_mixture(fs2, None, Hypothesis(np.zeros((2, 2)), [0.7, 0.7]))


class TestSketchFile:
    def test_round_trip(self, tmp_path, fs2, rng):
        sk = sketch_stream(fs2, rng.standard_normal((321, 2)))
        path = tmp_path / "s.csks"
        save_sketch(sk, path)
        back = load_sketch(path)
        assert back == sk
        assert back.n == 321 and back.freq_hash == fs2.content_hash
        assert sketch_to_bytes(back) == path.read_bytes()
        np.testing.assert_array_equal(finalize(back), finalize(sk))

    def test_corrupt(self, fs2, rng):
        raw = bytearray(sketch_to_bytes(sketch_stream(fs2, rng.standard_normal((5, 2)))))
        raw[60] ^= 0x10
        with pytest.raises(CorruptFile):
            sketch_from_bytes(bytes(raw))

    def test_truncated(self):
        with pytest.raises(UnsupportedFormat):
            sketch_from_bytes(b"CSKS")

    def test_version(self, fs2):
        raw = bytearray(sketch_to_bytes(Sketch.empty(fs2)))
        raw[4] = 9
        with pytest.raises(UnsupportedFormat):
            sketch_from_bytes(bytes(raw))
