"""Generator tests: renderer contracts, grasp rule, cross-modal wiring."""

import numpy as np
import pytest

from vtmatch import world as w
from vtmatch.errors import DegenerateObjectError, InvalidGraspError

CFG = w.WorldConfig()


def make_spec(**kw):
    values = dict(
        size=0.7, aspect=0.5, curvature=0.5, hue=0.3,
        texture_freq=0.5, texture_amp=0.5, hardness=0.5, gloss=0.2,
    )
    values.update(kw)
    return w.ObjectSpec(0, np.array([values[f] for f in w.LATENT_FIELDS]))


def highpass_energy(img, mask=None):
    blur = sum(
        img[:, 1 + di : img.shape[1] - 1 + di, 1 + dj : img.shape[2] - 1 + dj]
        for di in (-1, 0, 1)
        for dj in (-1, 0, 1)
    ) / 9.0
    hp = (img[:, 1:-1, 1:-1] - blur) ** 2
    if mask is None:
        return float(hp.mean())
    sel = mask[1:-1, 1:-1]
    return float(hp[:, sel].mean())


class TestObjectSampling:
    def test_fixed_seed_reproducible(self):
        a = w.sample_object(np.random.default_rng(9), 4)
        b = w.sample_object(np.random.default_rng(9), 4)
        np.testing.assert_array_equal(a.latent, b.latent)
        assert a.object_id == 4

    def test_uniform_component_means(self):
        rng = np.random.default_rng(0)
        latents = np.stack([w.sample_object(rng, i).latent for i in range(1000)])
        means = latents.mean(axis=0)
        assert np.all(means > 0.45) and np.all(means < 0.55)

    def test_distinct_seeds_distinct_latents(self):
        a = w.sample_object(np.random.default_rng(1), 0)
        b = w.sample_object(np.random.default_rng(2), 0)
        assert not np.array_equal(a.latent, b.latent)

    def test_latent_bounds_enforced(self):
        with pytest.raises(ValueError):
            w.ObjectSpec(0, np.array([1.2, 0, 0, 0, 0, 0, 0, 0]))

    def test_named_components(self):
        spec = make_spec(hardness=0.9)
        assert spec.hardness == 0.9
        assert spec.size == 0.7


class TestRenderVisual:
    def test_zero_texture_amp_constant_interior(self):
        spec = make_spec(texture_amp=0.0, gloss=0.0, size=0.9)
        obs = w.render_visual(spec, np.random.default_rng(5), CFG)
        inner = obs.image[:, 12:20, 12:20]
        assert float(inner.std(axis=(1, 2)).max()) < 0.03

    def test_size_zero_is_background_only(self):
        spec = make_spec(size=0.0)
        obs = w.render_visual(spec, np.random.default_rng(6), CFG)
        # background + brightness jitter + noise, no silhouette
        assert abs(float(obs.image.mean()) - 0.12) < 0.03
        assert float(obs.image.std()) < 0.05

    def test_repeat_render_jitter_magnitude(self):
        spec = make_spec()
        r1 = w.render_visual(spec, np.random.default_rng(10), CFG)
        r2 = w.render_visual(spec, np.random.default_rng(11), CFG)
        mad = float(np.abs(r1.image - r2.image).mean())
        assert 0.0 < mad < 0.1

    def test_values_in_unit_interval(self):
        rng = np.random.default_rng(0)
        for i in range(20):
            obs = w.render_visual(w.sample_object(rng, i), np.random.default_rng(i), CFG)
            assert obs.image.min() >= 0.0 and obs.image.max() <= 1.0

    def test_deterministic_given_seed(self):
        spec = make_spec()
        a = w.render_visual(spec, np.random.default_rng(3), CFG)
        b = w.render_visual(spec, np.random.default_rng(3), CFG)
        np.testing.assert_array_equal(a.image, b.image)


class TestGraspSuccess:
    def test_center_succeeds_for_any_positive_size(self):
        for size in (0.05, 0.3, 1.0):
            spec = make_spec(size=size)
            assert w.grasp_success(spec, w.GraspParams((0.0, 0.0), 0.5), CFG)

    def test_weak_force_always_fails(self):
        spec = make_spec(size=1.0)
        assert not w.grasp_success(spec, w.GraspParams((0.0, 0.0), 0.1), CFG)

    def test_outside_footprint_fails(self):
        spec = make_spec(size=0.1)
        assert not w.grasp_success(spec, w.GraspParams((1.0, 1.0), 0.9), CFG)

    def test_matches_superellipse_oracle(self):
        rng = np.random.default_rng(7)
        for i in range(200):
            spec = w.sample_object(rng, i)
            ox, oy = rng.uniform(-1, 1, 2)
            force = float(rng.uniform(0, 1))
            a, b, p = w._shape_params(spec)
            if a <= 1e-6:
                inside = False
            else:
                inside = abs(ox / a) ** p + abs(oy / b) ** p <= 1.0
            expected = inside and force >= CFG.min_force
            got = w.grasp_success(spec, w.GraspParams((float(ox), float(oy)), force), CFG)
            assert got == expected


class TestRenderTactile:
    def test_flat_contact_low_stdev(self):
        spec = make_spec(texture_amp=0.0, size=1.0)
        grasp = w.GraspParams((0.0, 0.0), 0.6)
        obs = w.render_tactile(spec, grasp, np.random.default_rng(2), CFG)
        assert float(obs.finger_a.std(axis=(1, 2)).max()) < 0.03
        assert float(obs.finger_b.std(axis=(1, 2)).max()) < 0.03

    def test_force_monotonicity(self):
        spec = make_spec(texture_amp=0.3)
        lo = w.render_tactile(spec, w.GraspParams((0.0, 0.0), CFG.min_force),
                              np.random.default_rng(3), CFG)
        hi = w.render_tactile(spec, w.GraspParams((0.0, 0.0), 1.0),
                              np.random.default_rng(3), CFG)
        assert hi.finger_a.mean() > lo.finger_a.mean()

    def test_finger_b_mirrors_noise_free_render(self):
        noise_free = w.WorldConfig(pixel_noise=0.0)
        rng = np.random.default_rng(8)
        for i in range(10):
            spec = w.sample_object(rng, i)
            if spec.size < 0.2:
                continue
            grasp = w.GraspParams((0.0, 0.0), 0.7)
            oracle = w.render_tactile(spec, grasp, np.random.default_rng(50 + i),
                                      noise_free)
            noisy = w.render_tactile(spec, grasp, np.random.default_rng(60 + i), CFG)
            mad = float(
                np.abs(noisy.finger_b - oracle.finger_a[:, :, ::-1]).mean()
            )
            assert mad < 0.05

    def test_invalid_grasp_raises(self):
        spec = make_spec(size=0.1)
        with pytest.raises(InvalidGraspError):
            w.render_tactile(spec, w.GraspParams((0.9, 0.9), 0.9),
                             np.random.default_rng(0), CFG)

    def test_values_in_unit_interval(self):
        rng = np.random.default_rng(1)
        for i in range(20):
            spec = w.sample_object(rng, i)
            if spec.size < 0.1:
                continue
            obs = w.render_tactile(spec, w.GraspParams((0.0, 0.0), 0.9),
                                   np.random.default_rng(i), CFG)
            for img in (obs.finger_a, obs.finger_b):
                assert img.min() >= 0.0 and img.max() <= 1.0


class TestCollectEpisode:
    def test_reasonable_sizes_always_succeed(self):
        rng = np.random.default_rng(21)
        for i in range(20):
            spec = w.sample_object(rng, i)
            if spec.size < 0.2:
                spec = w.ObjectSpec(i, np.clip(spec.latent, 0.2, 1.0))
            ep = w.collect_episode(spec, np.random.default_rng(i), CFG, i)
            assert ep.success

    def test_degenerate_object_error(self):
        spec = make_spec(size=0.0)
        with pytest.raises(DegenerateObjectError):
            w.collect_episode(spec, np.random.default_rng(0), CFG)

    def test_fixed_seed_identical_bytes(self):
        spec = make_spec()
        a = w.collect_episode(spec, np.random.default_rng(12), CFG, 0)
        b = w.collect_episode(spec, np.random.default_rng(12), CFG, 0)
        assert a.grasp == b.grasp
        np.testing.assert_array_equal(a.visual.image, b.visual.image)
        np.testing.assert_array_equal(a.tactile.finger_a, b.tactile.finger_a)
        np.testing.assert_array_equal(a.tactile.finger_b, b.tactile.finger_b)


class TestCrossModalWiring:
    def test_nearest_latent_identifies_every_episode(self):
        rng = np.random.default_rng(30)
        objects = w.generate_objects(20, rng)
        latents = np.stack([o.latent for o in objects])
        for spec in objects:
            if spec.size < 0.2:
                continue
            ep = w.collect_episode(spec, np.random.default_rng(spec.object_id), CFG,
                                   spec.object_id)
            dists = np.linalg.norm(latents - latents[ep.object_id], axis=1)
            assert int(np.argmin(dists)) == ep.object_id

    def test_texture_energy_correlates_across_modalities(self):
        rng = np.random.default_rng(5)
        vis_energy, tac_energy = [], []
        i = 0
        while len(vis_energy) < 50:
            spec = w.sample_object(rng, i)
            i += 1
            if spec.size < 0.15:
                continue
            a, b, p = w._shape_params(spec)
            ve, te = [], []
            for k in range(12):
                try:
                    ep = w.collect_episode(spec, np.random.default_rng(1000 * i + k),
                                           CFG, i)
                except DegenerateObjectError:
                    break
                c = np.linspace(-1, 1, CFG.resolution)
                xx, yy = np.meshgrid(c, c, indexing="xy")
                interior = w._superellipse_metric(xx, yy, a, b, p) < 0.7
                if interior.sum() < 12:
                    break
                ve.append(highpass_energy(ep.visual.image, interior))
                te.append(
                    (highpass_energy(ep.tactile.finger_a)
                     + highpass_energy(ep.tactile.finger_b)) / 2.0
                )
            if len(ve) < 12:
                continue
            vis_energy.append(np.median(ve))
            tac_energy.append(np.median(te))
        corr = float(np.corrcoef(vis_energy, tac_energy)[0, 1])
        assert corr > 0.5
