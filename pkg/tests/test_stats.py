import numpy as np
import pytest

from m3e2lab.errors import ParameterError, RankError
from m3e2lab.stats import SeededRng, first_pc_scores, kmeans, pca_components, sample, stddev


def eig_oracle(x, k):
    # full dense eigendecomposition of the column-centered covariance
    x = np.asarray(x, dtype=np.float64)
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / x.shape[0]
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(-vals)
    return vals[order][:k], vecs[:, order][:, :k].T


class TestSample:
    def test_same_seed_bit_identical(self):
        for dist in [("normal", 0.0, 1.0), ("uniform", -1.0, 2.0), ("binomial", 0.3), ("inv_gamma", 3.0, 1.0)]:
            a = sample(SeededRng(42), dist, 1000)
            b = sample(SeededRng(42), dist, 1000)
            assert np.array_equal(a, b)

    def test_binomial_degenerate(self):
        rng = SeededRng(1)
        assert np.array_equal(sample(rng, ("binomial", 0.0), 50), np.zeros(50))
        assert np.array_equal(sample(rng, ("binomial", 1.0), 50), np.ones(50))

    def test_binomial_values_are_binary(self):
        draws = sample(SeededRng(2), ("binomial", 0.4), 500)
        assert set(np.unique(draws)) <= {0.0, 1.0}

    def test_binomial_elementwise_probabilities(self):
        p = np.concatenate([np.zeros(100), np.ones(100)])
        draws = sample(SeededRng(3), ("binomial", p), 200)
        assert np.array_equal(draws, p)

    def test_normal_clt_bounds(self):
        draws = sample(SeededRng(7), ("normal", 0.0, 1.0), 100_000)
        assert abs(draws.mean()) < 0.02
        assert abs(draws.std() - 1.0) < 0.02

    def test_inv_gamma_analytic_mean(self):
        # mean of InvGamma(3, 1) is beta/(alpha-1) = 0.5
        draws = sample(SeededRng(11), ("inv_gamma", 3.0, 1.0), 100_000)
        assert abs(draws.mean() - 0.5) < 0.05

    @pytest.mark.parametrize(
        "dist",
        [("normal", 0.0, 0.0), ("normal", 0.0, -1.0), ("uniform", 2.0, 2.0), ("binomial", 1.5), ("inv_gamma", 0.0, 1.0), ("inv_gamma", 3.0, -2.0)],
    )
    def test_invalid_parameters(self, dist):
        with pytest.raises(ParameterError):
            sample(SeededRng(0), dist, 10)


class TestPca:
    def test_line_y_equals_x(self):
        t = np.linspace(-3, 3, 40)
        comp = pca_components(np.column_stack([t, t]), 1)
        assert np.allclose(comp[0], [1 / np.sqrt(2), 1 / np.sqrt(2)], atol=1e-10)

    def test_orthonormal_rows(self):
        rng = np.random.default_rng(5)
        comps = pca_components(rng.normal(size=(30, 4)), 2)
        assert np.allclose(comps @ comps.T, np.eye(2), atol=1e-8)

    def test_explained_variance_matches_eig_oracle(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(50, 6)) @ np.diag([3.0, 2.5, 1.0, 0.8, 0.3, 0.1])
        comps = pca_components(x, 6)
        centered = x - x.mean(axis=0)
        projected_var = np.array([np.mean((centered @ c) ** 2) for c in comps])
        oracle_vals, _ = eig_oracle(x, 6)
        assert np.allclose(projected_var, oracle_vals, atol=1e-6)
        assert np.all(np.diff(projected_var) <= 1e-12)

    def test_power_iteration_path_matches_eig_oracle(self):
        # >512 columns takes the power-iteration route
        rng = np.random.default_rng(13)
        x = rng.normal(size=(40, 520))
        comps = pca_components(x, 3)
        oracle_vals, oracle_vecs = eig_oracle(x, 3)
        centered = x - x.mean(axis=0)
        projected_var = np.array([np.mean((centered @ c) ** 2) for c in comps])
        assert np.allclose(projected_var, oracle_vals, rtol=1e-8)
        for mine, ref in zip(comps, oracle_vecs):
            assert min(np.linalg.norm(mine - ref), np.linalg.norm(mine + ref)) < 1e-6
        assert np.allclose(comps @ comps.T, np.eye(3), atol=1e-8)

    def test_rank_error(self):
        x = np.column_stack([np.arange(10.0), np.arange(10.0) * 2.0])
        with pytest.raises(RankError):
            pca_components(x, 2)

    def test_too_many_components(self):
        with pytest.raises(RankError):
            pca_components(np.random.default_rng(0).normal(size=(5, 2)), 3)


class TestFirstPcScores:
    def test_single_column_is_centered_column(self):
        u = np.array([1.0, 4.0, -2.0, 3.0])
        assert np.allclose(first_pc_scores(u.reshape(-1, 1)), u - u.mean(), atol=1e-15)

    def test_duplicated_column_proportional_to_centered(self):
        rng = np.random.default_rng(3)
        u = rng.normal(size=60)
        scores = first_pc_scores(np.column_stack([u, u]))
        centered = u - u.mean()
        ratio = scores / centered
        assert np.allclose(ratio, ratio[0], atol=1e-8)

    def test_matches_eig_oracle_up_to_sign(self):
        rng = np.random.default_rng(17)
        x = rng.normal(size=(100, 5))
        scores = first_pc_scores(x)
        _, vecs = eig_oracle(x, 1)
        ref = (x - x.mean(axis=0)) @ vecs[0]
        assert min(np.linalg.norm(scores - ref), np.linalg.norm(scores + ref)) < 1e-8


class TestKmeans:
    def _blobs(self, seed=0):
        rng = np.random.default_rng(seed)
        centers = np.array([[0.0, 0.0], [20.0, 0.0], [0.0, 20.0]])
        truth = np.repeat(np.arange(3), 50)
        x = centers[truth] + rng.normal(scale=1.0, size=(150, 2))
        return x, truth

    def test_well_separated_blobs_recovered(self):
        x, truth = self._blobs()
        labels = kmeans(x, 3, SeededRng(1))
        # same partition up to label permutation
        for c in range(3):
            members = labels[truth == c]
            assert len(set(members)) == 1
        assert len(set(labels)) == 3

    def test_k_equals_one(self):
        x, _ = self._blobs()
        assert np.array_equal(kmeans(x, 1, SeededRng(0)), np.zeros(150, dtype=int))

    def test_identical_rows_terminate_nonempty(self):
        x = np.ones((20, 3))
        labels = kmeans(x, 2, SeededRng(5))
        assert set(labels) == {0, 1}

    def test_deterministic_in_seed(self):
        x, _ = self._blobs(seed=4)
        a = kmeans(x, 3, SeededRng(9))
        b = kmeans(x, 3, SeededRng(9))
        assert np.array_equal(a, b)

    def test_wcss_never_increases(self):
        for seed in range(10):
            rng = np.random.default_rng(seed)
            x = rng.normal(size=(80, 3))
            _, history = kmeans(x, 4, SeededRng(seed), with_history=True)
            diffs = np.diff(history)
            assert np.all(diffs <= 1e-9 * max(history))

    def test_too_few_rows(self):
        with pytest.raises(ParameterError):
            kmeans(np.zeros((2, 2)), 3, SeededRng(0))


class TestStddev:
    def test_constant_vector(self):
        assert stddev(np.full(10, 3.3)) == 0.0

    def test_two_point(self):
        assert stddev([0.0, 2.0]) == 1.0

    def test_two_pass_oracle(self):
        rng = np.random.default_rng(21)
        v = rng.normal(scale=4.0, size=500)
        mean = sum(v) / len(v)
        oracle = (sum((x - mean) ** 2 for x in v) / len(v)) ** 0.5
        assert abs(stddev(v) - oracle) < 1e-12
