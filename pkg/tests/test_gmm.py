import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ivnli.gmm import (
    DiagonalGmm,
    EmConfig,
    GmmError,
    em_train,
    frame_posteriors,
    initialize_gmm,
    log_likelihood,
    map_adapt,
    variance_floor,
)
from ivnli.kvconfig import ConfigError


def _random_gmm(rng, k, d):
    w = rng.dirichlet(np.ones(k))
    return DiagonalGmm(w, rng.standard_normal((k, d)), rng.uniform(0.3, 2.0, (k, d)))


def _brute_loglik(gmm, x):
    """Per-frame sum of weighted Gaussian densities, evaluated one term at a time."""
    total = 0.0
    for frame in x:
        p = 0.0
        for k in range(gmm.n_components):
            dens = gmm.weights[k]
            for d in range(gmm.dim):
                v = gmm.variances[k, d]
                dens *= math.exp(-0.5 * (frame[d] - gmm.means[k, d]) ** 2 / v) / math.sqrt(2 * math.pi * v)
            p += dens
        total += math.log(p)
    return total


class TestLogLikelihood:
    def test_standard_normal_at_zero(self):
        gmm = DiagonalGmm([1.0], [[0.0]], [[1.0]])
        assert log_likelihood(gmm, np.zeros((1, 1))) == pytest.approx(-0.9189385332046727, abs=1e-12)

    def test_matches_brute_force(self, rng):
        gmm = _random_gmm(rng, 3, 2)
        x = rng.standard_normal((20, 2))
        assert log_likelihood(gmm, x) == pytest.approx(_brute_loglik(gmm, x), rel=1e-10)

    def test_duplication_doubles(self, rng):
        gmm = _random_gmm(rng, 4, 3)
        x = rng.standard_normal((50, 3))
        assert log_likelihood(gmm, np.vstack([x, x])) == pytest.approx(2 * log_likelihood(gmm, x), rel=1e-12)

    def test_permutation_invariant(self, rng):
        gmm = _random_gmm(rng, 4, 3)
        perm = [2, 0, 3, 1]
        permuted = DiagonalGmm(gmm.weights[perm], gmm.means[perm], gmm.variances[perm])
        x = rng.standard_normal((30, 3))
        assert log_likelihood(permuted, x) == pytest.approx(log_likelihood(gmm, x), rel=1e-12)


class TestPosteriors:
    def test_single_component(self):
        gmm = DiagonalGmm([1.0], [[3.0, 1.0]], [[1.0, 2.0]])
        np.testing.assert_array_equal(frame_posteriors(gmm, np.array([100.0, -5.0])), [1.0])

    def test_symmetric_midpoint(self):
        gmm = DiagonalGmm([0.5, 0.5], [[-2.0, 0.0], [2.0, 0.0]], [[1.0, 1.0], [1.0, 1.0]])
        np.testing.assert_allclose(frame_posteriors(gmm, np.array([0.0, 0.7])), [0.5, 0.5], atol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), k=st.integers(1, 8), d=st.integers(1, 5))
    def test_normalized(self, seed, k, d):
        g = np.random.default_rng(seed)
        gmm = _random_gmm(g, k, d)
        frame = 10 * g.standard_normal(d)
        post = frame_posteriors(gmm, frame)
        assert abs(post.sum() - 1.0) <= 1e-10
        assert np.all(post >= 0)


class TestInitialize:
    def test_single_component(self, rng):
        x = rng.standard_normal((200, 3)) * [1.0, 2.0, 3.0] + 5
        gmm = initialize_gmm(x, EmConfig(n_components=1))
        np.testing.assert_allclose(gmm.means[0], x.mean(0))
        np.testing.assert_allclose(gmm.variances[0], x.var(0))
        assert gmm.weights.tolist() == [1.0]

    @pytest.mark.parametrize("init", ["kmeans", "binary_split"])
    def test_deterministic(self, rng, init):
        x = rng.standard_normal((300, 4))
        cfg = EmConfig(n_components=6, seed=3, init=init)
        assert initialize_gmm(x, cfg) == initialize_gmm(x, cfg)
        assert initialize_gmm(x, cfg).n_components == 6

    def test_four_points_four_components(self):
        pts = np.array([[0.0, 0.0], [5.0, 1.0], [-3.0, 4.0], [2.0, -6.0]])
        for seed in range(10):
            gmm = initialize_gmm(pts, EmConfig(n_components=4, seed=seed))
            matched = any(np.array_equal(gmm.means[list(p)], pts) for p in itertools.permutations(range(4)))
            assert matched

    def test_too_few_frames(self):
        with pytest.raises(GmmError):
            initialize_gmm(np.zeros((3, 2)), EmConfig(n_components=4))

    def test_duplicated_points(self):
        x = np.repeat(np.array([[0.0, 0.0], [1.0, 1.0]]), 10, axis=0)
        gmm = initialize_gmm(x, EmConfig(n_components=4))
        assert np.all(np.isfinite(gmm.means))


class TestEm:
    def test_single_gaussian_one_iteration(self, rng):
        x = rng.normal(2.0, 3.0, size=(400, 2))
        init = DiagonalGmm([1.0], [[0.0, 0.0]], [[1.0, 1.0]])
        gmm = em_train(init, x, EmConfig(n_components=1, n_iterations=1))
        np.testing.assert_allclose(gmm.means[0], x.mean(0), rtol=1e-12)
        np.testing.assert_allclose(gmm.variances[0], x.var(0), rtol=1e-10)

    def test_zero_iterations_rejected(self):
        with pytest.raises(ConfigError):
            EmConfig(n_iterations=0)

    def test_history_monotone_and_floor(self, rng):
        x = np.vstack([rng.normal(-3, 1, (150, 2)), rng.normal(3, 0.5, (150, 2))])
        cfg = EmConfig(n_components=4, n_iterations=15)
        gmm, hist = em_train(initialize_gmm(x, cfg), x, cfg, return_history=True)
        assert hist.size == 16
        assert np.all(np.diff(hist) >= -1e-8 * np.abs(hist[:-1]))
        assert np.all(gmm.variances >= variance_floor(x, cfg.variance_floor))
        assert abs(gmm.weights.sum() - 1.0) <= 1e-12

    def test_floor_engages_on_collapsed_cluster(self):
        x = np.vstack([np.zeros((20, 2)), np.random.default_rng(0).standard_normal((100, 2)) + 5])
        cfg = EmConfig(n_components=2, n_iterations=5)
        gmm = em_train(initialize_gmm(x, cfg), x, cfg)
        floor = variance_floor(x, cfg.variance_floor)
        assert np.all(gmm.variances >= floor)
        assert np.any(np.isclose(gmm.variances, floor))

    def test_deterministic_bytes(self, rng):
        x = rng.standard_normal((300, 3))
        cfg = EmConfig(n_components=4, n_iterations=4, seed=9)
        a = em_train(initialize_gmm(x, cfg), x, cfg)
        b = em_train(initialize_gmm(x, cfg), x, cfg)
        assert a.means.tobytes() == b.means.tobytes()
        assert a.variances.tobytes() == b.variances.tobytes()

    def test_non_finite_input_aborts(self, rng):
        x = rng.standard_normal((50, 2))
        init = initialize_gmm(x, EmConfig(n_components=2))
        x[3, 0] = np.inf
        with pytest.raises(GmmError, match="iteration 0"):
            em_train(init, x, EmConfig(n_components=2))


class TestMapAdapt:
    def test_empty_features(self, rng):
        ubm = _random_gmm(rng, 3, 2)
        assert map_adapt(ubm, np.zeros((0, 2))) == ubm

    def test_tiny_relevance_gives_data_mean(self, rng):
        ubm = _random_gmm(rng, 3, 2)
        x = rng.standard_normal((40, 2))
        gamma = ubm.posteriors(x)
        data_mean = gamma.T @ x / gamma.sum(0)[:, None]
        adapted = map_adapt(ubm, x, relevance=1e-9)
        np.testing.assert_allclose(adapted.means, data_mean, rtol=1e-6, atol=1e-8)
        np.testing.assert_array_equal(adapted.variances, ubm.variances)
        np.testing.assert_array_equal(adapted.weights, ubm.weights)

    def test_relevance_equal_count_gives_midpoint(self, rng):
        ubm = DiagonalGmm([1.0], [[0.0, 1.0]], [[1.0, 1.0]])
        x = rng.standard_normal((25, 2)) + 4
        adapted = map_adapt(ubm, x, relevance=25.0)
        np.testing.assert_allclose(adapted.means[0], 0.5 * (x.mean(0) + ubm.means[0]), rtol=1e-12)
