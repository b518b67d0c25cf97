"""CCA baseline tests: featurization, planted correlations, scoring."""

import numpy as np
import pytest

from vtmatch import cca
from vtmatch import world as w
from vtmatch.errors import ConfigError, NumericError


def planted_pair_data(rho, n, dx, dy, seed):
    """Gaussian pairs whose canonical correlations are exactly ``rho``."""
    rng = np.random.default_rng(seed)
    P = np.zeros((dx, dy))
    for i, r in enumerate(rho):
        P[i, i] = r
    cov = np.block([[np.eye(dx), P], [P.T, np.eye(dy)]])
    z = rng.normal(size=(n, dx + dy)) @ np.linalg.cholesky(cov).T
    qx, _ = np.linalg.qr(rng.normal(size=(dx, dx)))
    qy, _ = np.linalg.qr(rng.normal(size=(dy, dy)))
    return z[:, :dx] @ qx.T, z[:, dx:] @ qy.T


class TestFeaturize:
    def test_visual_dimension(self):
        obs = w.VisualObs(image=np.zeros((3, 32, 32)))
        assert cca.featurize_visual(obs).shape == (768,)

    def test_tactile_dimension(self):
        obs = w.TactileObs(finger_a=np.zeros((3, 32, 32)), finger_b=np.zeros((3, 32, 32)))
        assert cca.featurize_tactile(obs).shape == (1536,)

    def test_constant_image_constant_vector(self):
        obs = w.VisualObs(image=np.full((3, 16, 16), 0.37))
        np.testing.assert_allclose(cca.featurize_visual(obs), 0.37)

    def test_average_pooling_value(self):
        img = np.zeros((1, 2, 2))
        img[0] = [[0.0, 0.0], [1.0, 1.0]]
        obs = w.VisualObs(image=img)
        np.testing.assert_allclose(cca.featurize_visual(obs), [0.5])

    def test_batch_matches_single(self):
        rng = np.random.default_rng(0)
        images = rng.random((4, 3, 16, 16))
        batch = cca.featurize_visual_batch(images)
        for i in range(4):
            np.testing.assert_allclose(
                batch[i], cca.featurize_visual(w.VisualObs(image=images[i]))
            )


class TestFitCca:
    def test_perfect_correlation(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(200, 1))
        model = cca.fit_cca(x, x.copy(), 1, 1, ridge=0.0)
        assert model.correlations[0] == pytest.approx(1.0, abs=1e-8)

    def test_planted_correlations_recovered(self):
        # isotropic per-modality covariance: keep every principal direction,
        # truncation would drop a random share of the planted structure
        for seed in (2, 3, 4):
            x, y = planted_pair_data([0.9, 0.5], 3000, 6, 6, seed=seed)
            model = cca.fit_cca(x, y, 6, 2, ridge=1e-6)
            assert abs(model.correlations[0] - 0.9) < 0.05
            assert abs(model.correlations[1] - 0.5) < 0.05

    def test_independent_data_low_correlation(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(500, 8))
        y = rng.normal(size=(500, 7))
        model = cca.fit_cca(x, y, 5, 5, ridge=1e-6)
        assert np.all(model.correlations < 0.3)

    def test_independent_data_below_permutation_null(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(500, 8))
        y = rng.normal(size=(500, 7))
        model = cca.fit_cca(x, y, 5, 5, ridge=1e-6)
        null_top = sorted(
            cca.fit_cca(x, y[rng.permutation(500)], 5, 5, 1e-6).correlations[0]
            for _ in range(20)
        )
        p95 = null_top[int(0.95 * len(null_top))]
        assert np.all(model.correlations <= p95 + 0.05)

    def test_correlations_sorted_in_unit_interval(self):
        x, y = planted_pair_data([0.8, 0.6, 0.3], 2000, 8, 8, seed=5)
        model = cca.fit_cca(x, y, 8, 4, ridge=1e-4)
        rho = model.correlations
        assert np.all(rho[:-1] >= rho[1:] - 1e-12)
        assert np.all(rho >= 0.0) and np.all(rho <= 1.0)

    def test_unit_variance_projections(self):
        x, y = planted_pair_data([0.7], 1500, 6, 6, seed=6)
        model = cca.fit_cca(x, y, 6, 3, ridge=1e-3)
        assert np.allclose(model.tactile_coords(x).std(0, ddof=1), 1.0, atol=1e-6)
        assert np.allclose(model.visual_coords(y).std(0, ddof=1), 1.0, atol=1e-6)

    def test_deterministic(self):
        x, y = planted_pair_data([0.5], 800, 5, 4, seed=7)
        a = cca.fit_cca(x, y, 4, 2, ridge=1e-4)
        b = cca.fit_cca(x, y, 4, 2, ridge=1e-4)
        np.testing.assert_array_equal(a.proj_tactile, b.proj_tactile)
        np.testing.assert_array_equal(a.proj_visual, b.proj_visual)

    def test_preconditions(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(10, 4))
        y = rng.normal(size=(10, 4))
        with pytest.raises(ConfigError):
            cca.fit_cca(x, y, 10, 2, 1e-3)  # n must exceed p
        with pytest.raises(ConfigError):
            cca.fit_cca(x, y, 2, 3, 1e-3)  # p >= C
        with pytest.raises(ConfigError):
            cca.fit_cca(x, y, 5, 1, 1e-3)  # p <= feature dim

    def test_rank_deficiency_raises(self):
        rng = np.random.default_rng(9)
        base = rng.normal(size=(50, 1))
        x = np.repeat(base, 4, axis=1)  # rank-1 features
        y = rng.normal(size=(50, 3))
        with pytest.raises(NumericError, match="condition"):
            cca.fit_cca(x, y, 3, 2, ridge=0.0)


class TestScore:
    @pytest.fixture()
    def fitted(self):
        x, y = planted_pair_data([0.9, 0.4], 2000, 6, 5, seed=10)
        return cca.fit_cca(x, y, 5, 2, ridge=1e-4), x, y

    def test_centering_invariance(self, fitted):
        model, x, y = fitted
        s1 = model.score_features(x[0] + model.mean_tactile * 0,
                                  y[0] + model.mean_visual * 0)
        s2 = model.score_features(x[0], y[0])
        assert s1 == pytest.approx(s2)

    def test_antipodal_projection_negates(self, fitted):
        model, x, y = fitted
        base = model.score_features(x[3], y[3])
        mirrored = model.score_features(x[3], 2 * model.mean_visual - y[3])
        assert mirrored == pytest.approx(-base, rel=1e-9)

    def test_bilinear_in_projections(self, fitted):
        model, x, y = fitted
        a = model.score_features(x[1], y[2])
        scaled = model.mean_tactile + 3.0 * (x[1] - model.mean_tactile)
        assert model.score_features(scaled, y[2]) == pytest.approx(3.0 * a, rel=1e-9)

    def test_positive_pairs_score_above_threshold_on_average(self, fitted):
        model, x, y = fitted
        rng = np.random.default_rng(11)
        labels = np.concatenate([np.ones(2000), np.zeros(2000)])
        xs = np.concatenate([x, x])
        ys = np.concatenate([y, y[rng.permutation(2000)]])
        cca.calibrate_threshold(model, xs, ys, labels)
        decide = model.score_features(xs, ys) >= model.threshold
        balanced = 0.5 * (decide[:2000].mean() + (~decide[2000:]).mean())
        assert balanced > 0.6

    def test_calibration_needs_both_classes(self, fitted):
        model, x, y = fitted
        with pytest.raises(ConfigError):
            cca.calibrate_threshold(model, x, y, np.ones(len(x)))


class TestPersistence:
    def test_round_trip(self, tmp_path):
        x, y = planted_pair_data([0.6], 500, 4, 4, seed=12)
        model = cca.fit_cca(x, y, 4, 2, ridge=1e-3)
        labels = np.concatenate([np.ones(500), np.zeros(500)])
        rng = np.random.default_rng(13)
        cca.calibrate_threshold(
            model, np.concatenate([x, x]), np.concatenate([y, y[rng.permutation(500)]]),
            labels,
        )
        cca.save_cca(model, tmp_path / "cca")
        loaded = cca.load_cca(tmp_path / "cca")
        assert loaded.threshold == model.threshold
        assert loaded.ridge == model.ridge
        np.testing.assert_array_equal(loaded.correlations, model.correlations)
        np.testing.assert_array_equal(loaded.proj_tactile, model.proj_tactile)
        s_orig = model.score_features(x[0], y[0])
        s_load = loaded.score_features(x[0], y[0])
        assert s_orig == s_load
