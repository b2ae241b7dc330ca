import math

import numpy as np
import pytest

from compsketch import Family, KernelParams
from compsketch.errors import InfeasibleSeparation, InvalidArgument
from compsketch.harness import (
    ExperimentConfig,
    em_gmm,
    generate_synthetic,
    lloyd_kmeans,
    match_centroids,
    phase_diagram,
    run_pipeline,
    separated_centroids,
    transition_point,
)
from compsketch.mixtures import separation_check
from compsketch.risk import clustering_risk


class TestSynthetic:
    @pytest.mark.parametrize("p", [1, 2])
    def test_noiseless_zero_risk(self, p):
        data = generate_synthetic("kmeans", 4, 3, 500, 1.0, 6.0, seed=3)
        assert clustering_risk(data.X, data.truth, p).risk == 0.0

    def test_truth_separated(self):
        for seed in range(20):
            data = generate_synthetic("kmeans", 5, 2, 10, 0.5, 4.0, seed=seed)
            assert separation_check(data.truth, 0.5, 4.0 + 1e-9).ok

    def test_uniform_balance(self):
        n, k = 20000, 5
        for seed in range(10):
            data = generate_synthetic("kmeans", k, 2, n, 0.5, 5.0, seed=seed)
            counts = np.bincount(data.labels, minlength=k)
            assert np.all(np.abs(counts - n / k) <= 4 * math.sqrt(n / k))

    def test_random_balance(self):
        data = generate_synthetic("kmeans", 3, 2, 10, 1.0, 5.0, balance="random", seed=1)
        assert data.truth.alphas.sum() == pytest.approx(1.0)
        assert not np.allclose(data.truth.alphas, 1 / 3)

    def test_determinism(self):
        a = generate_synthetic("gmm", 3, 2, 100, 1.0, 5.0, seed=7)
        b = generate_synthetic("gmm", 3, 2, 100, 1.0, 5.0, seed=7)
        c = generate_synthetic("gmm", 3, 2, 100, 1.0, 5.0, seed=8)
        assert a.X.tobytes() == b.X.tobytes()
        assert a.X.tobytes() != c.X.tobytes()

    def test_noise_level(self):
        data = generate_synthetic("kmeans", 1, 3, 50000, 1.0, 1.0, noise=0.3, seed=2)
        resid = data.X - data.truth.centroids[0]
        assert resid.std() == pytest.approx(0.3, rel=0.02)

    def test_gmm_covariance(self):
        L = np.array([[1.0, 0.0], [0.5, 0.5]])
        data = generate_synthetic("gmm", 1, 2, 50000, 1.0, 1.0, seed=4, sigma_chol=L)
        S = np.cov((data.X - data.truth.centroids[0]).T)
        np.testing.assert_allclose(S, L @ L.T, atol=0.03)

    def test_infeasible(self):
        with pytest.raises(InfeasibleSeparation):
            generate_synthetic("kmeans", 50, 2, 10, 1.0, 2.0, seed=0)
        with pytest.raises(InfeasibleSeparation):
            separated_centroids(3, 1, 3.0, 1.0, np.random.default_rng(0))

    def test_bad_args(self):
        with pytest.raises(InvalidArgument):
            generate_synthetic("median", 2, 2, 10, 1.0, 5.0)
        with pytest.raises(InvalidArgument):
            generate_synthetic("kmeans", 2, 2, 10, 1.0, 5.0, balance="skewed")


class TestBaselines:
    def test_lloyd_recovers_separated(self):
        data = generate_synthetic("kmeans", 4, 2, 2000, 1.0, 6.0, noise=0.1, seed=5)
        res = lloyd_kmeans(data.X, 4, seed=0)
        _, errs = match_centroids(data.truth, res.hypothesis)
        assert errs.max() < 0.05

    def test_lloyd_fixed_point(self, rng):
        X = rng.standard_normal((300, 2))
        h = lloyd_kmeans(X, 3, restarts=5, seed=1).hypothesis
        lab = np.argmin(np.sum((X[:, None] - h.centroids[None]) ** 2, -1), axis=1)
        for l in range(3):
            np.testing.assert_allclose(h.centroids[l], X[lab == l].mean(axis=0), atol=1e-10)

    def test_more_restarts_not_worse(self, rng):
        X = rng.standard_normal((400, 2))
        a = lloyd_kmeans(X, 5, restarts=1, seed=3).objective
        b = lloyd_kmeans(X, 5, restarts=10, seed=3).objective
        assert b <= a + 1e-12

    def test_em_recovers(self):
        L = np.eye(2)
        data = generate_synthetic("gmm", 2, 2, 5000, 4.0, 8.0, seed=6, sigma_chol=L)
        res = em_gmm(data.X, 2, L, restarts=5, seed=0)
        perm, errs = match_centroids(data.truth, res.hypothesis)
        assert errs.max() < 0.1
        np.testing.assert_allclose(res.hypothesis.alphas[perm], data.truth.alphas, atol=0.03)


class TestMatching:
    def test_permutation(self, rng):
        A = rng.standard_normal((5, 3))
        order = rng.permutation(5)
        perm, errs = match_centroids(A, A[order])
        assert np.all(errs == 0)
        np.testing.assert_array_equal(order[perm], np.arange(5))

    def test_optimal_over_greedy(self):
        truth = np.array([[0.0], [1.0]])
        est = np.array([[0.6], [2.0]])
        _, errs = match_centroids(truth, est)
        # greedy would match 1.0 -> 0.6 first and leave 0 -> 2 (max error 2)
        assert errs.max() == pytest.approx(1.0)

    def test_mahalanobis(self):
        p = KernelParams(Family.GAUSS, 2, 1.0, 1.0, np.diag([2.0, 1.0]))
        _, errs = match_centroids(np.zeros((1, 2)), np.array([[2.0, 0.0]]), metric=p)
        assert errs[0] == pytest.approx(1.0)


class TestConfig:
    def test_defaults_valid(self):
        cfg = ExperimentConfig()
        assert cfg.task == "kmeans" and 0 < cfg.tolerance <= 1

    @pytest.mark.parametrize("kw", [dict(k_values=[]), dict(m_grid=[0, 4]), dict(tolerance=0.0),
                                    dict(tolerance=1.5), dict(task="pca"), dict(s_policy="s2=1"),
                                    dict(trials=0)])
    def test_invalid(self, kw):
        with pytest.raises(InvalidArgument):
            ExperimentConfig(**kw)

    def test_unknown_key(self):
        with pytest.raises(InvalidArgument):
            ExperimentConfig.from_mapping({"trails": 3})

    def test_toml(self, tmp_path):
        path = tmp_path / "cfg.toml"
        path.write_text('task = "gmm"\nk_values = [2, 3]\nd_values = [2]\nm_grid = [8, 16]\n'
                        'tolerance = 0.2\ns_policy = "s2=2"\n')
        cfg = ExperimentConfig.from_toml(path)
        assert cfg.task == "gmm" and cfg.k_values == [2, 3] and cfg.tolerance == 0.2
        assert cfg.digest() == ExperimentConfig.from_toml(path).digest()
        assert cfg.digest() != ExperimentConfig().digest()

    def test_radius_fits_packing(self):
        cfg = ExperimentConfig()
        for k in (2, 4, 8):
            for d in (2, 4, 8):
                assert cfg.radius(k, d) >= cfg.radius(2, d)


class TestPipeline:
    def test_recovery_at_10kd(self):
        cfg = ExperimentConfig(n=10**4, restarts=3, baseline=True)
        wins = 0
        for seed in range(20):
            res = run_pipeline("kmeans", 3, 2, 60, cfg, seed)
            wins += res.success
            if res.success:
                assert res.risk <= 1.5 * res.baseline_risk + 1e-12
            assert set(res.times) >= {"generate", "frequencies", "sketch", "decode", "baseline"}
            assert len(res.freq_hash) == 64
        assert wins / 20 >= 0.9

    def test_failure_at_m2(self):
        cfg = ExperimentConfig(n=2000, restarts=1)
        wins = 0
        with pytest.warns(RuntimeWarning):
            for seed in range(10):
                wins += run_pipeline("kmeans", 3, 2, 2, cfg, seed).success
        assert wins / 10 <= 0.1

    def test_reproducible(self):
        cfg = ExperimentConfig(n=500, restarts=1)
        a = run_pipeline("kmeans", 2, 2, 20, cfg, 4)
        b = run_pipeline("kmeans", 2, 2, 20, cfg, 4)
        assert a.decoded.centroids.tobytes() == b.decoded.centroids.tobytes()
        assert a.freq_hash == b.freq_hash

    def test_gmm_close_to_em(self):
        cfg = ExperimentConfig(task="gmm", n=2000, eps=3.0, restarts=2, baseline=True, tolerance=0.3)
        res = run_pipeline("gmm", 2, 2, 40, cfg, 0)
        assert res.success
        assert res.risk <= res.baseline_risk + 0.01


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
class TestPhase:
    def _cfg(self, tmp_path, **kw):
        base = dict(k_values=[2], d_values=[2, 3], m_grid=[2, 8, 32, 64], n=500, trials=2, restarts=1,
                    out=str(tmp_path / "phase.csv"), timings_out=str(tmp_path / "times.csv"))
        base.update(kw)
        return ExperimentConfig(**base)

    def test_small_sweep(self, tmp_path):
        cfg = self._cfg(tmp_path)
        res = phase_diagram(cfg, stop_after=None)
        text = (tmp_path / "phase.csv").read_text()
        lines = text.splitlines()
        assert lines[0].startswith("#") and any("config_sha256=" in l for l in lines)
        header = [l for l in lines if not l.startswith("#")][0]
        assert header == "k,d,kd,m,trials,successes,success_rate,extrapolated"
        assert len(res.rows) == 2 * 4
        for r in res.rows:
            assert 0.0 <= r[6] <= 1.0
        assert "seconds" in (tmp_path / "times.csv").read_text().splitlines()[0]
        assert "seconds" not in text

    def test_byte_identical_rerun(self, tmp_path):
        cfg = self._cfg(tmp_path, d_values=[2])
        a = phase_diagram(cfg, write=False, stop_after=None)
        b = phase_diagram(cfg, write=False, stop_after=None)
        assert a.csv_text == b.csv_text

    def test_early_stop_marks_rows(self, tmp_path):
        cfg = self._cfg(tmp_path, m_grid=[32, 48, 64, 96], d_values=[2])
        res = phase_diagram(cfg, write=False, stop_after=1)
        flags = [r[7] for r in res.rows]
        assert flags[0] == 0 and flags == sorted(flags)

    def test_transition_point(self):
        assert transition_point([4, 8, 16], [0.0, 0.5, 1.0]) == 8
        assert transition_point([4, 8], [0.0, 0.2]) is None
