"""Match-network tests: init statistics, tying, loss, training, checkpoints."""

import math

import numpy as np
import pytest

from vtmatch import autodiff as ad
from vtmatch import data as d
from vtmatch import model as M
from vtmatch import world as w
from vtmatch.errors import ConfigError
from vtmatch.evaluate import MatchNetScorer

TINY = M.EncoderConfig(conv_channels=(2, 3), feature_dim=4, hidden_dim=5, dropout=0.5)
CFG16 = w.WorldConfig(resolution=16)


def tiny_batch(seed=1, n=2, res=8):
    rng = np.random.default_rng(seed)
    shape = (n, 3, res, res)
    y = np.array([[float(i % 2)] for i in range(n)])
    return (
        rng.random(shape) * 0.9 + 0.05,
        rng.random(shape) * 0.9 + 0.05,
        rng.random(shape) * 0.9 + 0.05,
        y,
    )


@pytest.fixture(scope="module")
def store16():
    rng = np.random.default_rng(55)
    objects = w.generate_objects(8, rng, min_size=0.25)
    episodes = []
    for spec in objects:
        for _ in range(6):
            episodes.append(w.collect_episode(spec, rng, CFG16, len(episodes)))
    return d.EpisodeStore.build(objects, episodes)


class TestInitModel:
    def test_same_seed_bit_identical(self):
        a = M.init_model(TINY, 3)
        b = M.init_model(TINY, 3)
        for (na, ta), (nb, tb) in zip(a.named_parameters(), b.named_parameters()):
            assert na == nb
            np.testing.assert_array_equal(ta.data, tb.data)

    def test_fan_in_scaled_stdev(self):
        cfg = M.EncoderConfig(conv_channels=(16,), feature_dim=100, hidden_dim=100)
        params = M.init_model(cfg, 0)
        # w2 has fan_in 100
        observed = params.w2.data.std()
        expected = math.sqrt(2.0 / 100.0)
        assert abs(observed - expected) / expected < 0.10

    def test_all_biases_zero(self):
        params = M.init_model(M.EncoderConfig(), 1)
        for name, t in params.named_parameters():
            if name.endswith("_b") or name.endswith(".b1") or name.endswith(".b2"):
                assert not t.data.any()

    def test_bad_config_rejected(self):
        with pytest.raises(ConfigError):
            M.EncoderConfig(dropout=1.0)
        with pytest.raises(ConfigError):
            M.EncoderConfig(feature_dim=0)


class TestEncoders:
    def test_weight_tying_is_structural(self):
        params = M.init_model(TINY, 2)
        names = [n for n, _ in params.named_parameters()]
        assert sum(n.startswith("tactile.") for n in names) == len(TINY.conv_channels) + 2
        # both finger branches must read the very same tensor objects
        ids_once = {id(t) for n, t in params.named_parameters() if n.startswith("tactile.")}
        assert len(ids_once) == len(TINY.conv_channels) + 2

    def test_update_affects_both_fingers(self):
        params = M.init_model(TINY, 2)
        rng = np.random.default_rng(0)
        img = rng.random((3, 8, 8))
        obs = w.TactileObs(finger_a=img, finger_b=img.copy())
        before = M.encode_tactile(params, obs)
        params.tactile.convs[0].data *= 1.5
        after = M.encode_tactile(params, obs)
        F = TINY.feature_dim
        # identical fingers stay identical after the shared update
        np.testing.assert_array_equal(after[:F], after[F:])
        assert not np.array_equal(before, after)

    def test_swap_fingers_permutes_halves(self):
        params = M.init_model(TINY, 4)
        rng = np.random.default_rng(1)
        obs = w.TactileObs(finger_a=rng.random((3, 8, 8)), finger_b=rng.random((3, 8, 8)))
        swapped = w.TactileObs(finger_a=obs.finger_b, finger_b=obs.finger_a)
        f = M.encode_tactile(params, obs)
        g = M.encode_tactile(params, swapped)
        F = TINY.feature_dim
        np.testing.assert_array_equal(f[:F], g[F:])
        np.testing.assert_array_equal(f[F:], g[:F])

    def test_zero_input_gives_bias_pathway(self):
        params = M.init_model(TINY, 5)
        zero = w.TactileObs(finger_a=np.zeros((3, 8, 8)), finger_b=np.zeros((3, 8, 8)))
        feats = M.encode_tactile(params, zero)
        expected = np.maximum(params.tactile.proj_b.data, 0.0)
        F = TINY.feature_dim
        np.testing.assert_allclose(feats[:F], expected, atol=1e-15)

    def test_default_dims(self):
        params = M.init_model(M.EncoderConfig(), 6)
        rng = np.random.default_rng(2)
        tac = w.TactileObs(finger_a=rng.random((3, 32, 32)), finger_b=rng.random((3, 32, 32)))
        vis = w.VisualObs(image=rng.random((3, 32, 32)))
        assert M.encode_tactile(params, tac).shape == (128,)
        assert M.encode_visual(params, vis).shape == (64,)


class TestPredictAndLoss:
    def test_probability_in_open_interval(self):
        params = M.init_model(TINY, 7)
        rng = np.random.default_rng(3)
        for _ in range(10):
            tac = w.TactileObs(finger_a=rng.random((3, 8, 8)), finger_b=rng.random((3, 8, 8)))
            vis = w.VisualObs(image=rng.random((3, 8, 8)))
            p = M.predict_match(params, tac, vis)
            assert 0.0 < p < 1.0

    def test_eval_mode_deterministic(self):
        params = M.init_model(TINY, 8)
        rng = np.random.default_rng(4)
        tac = w.TactileObs(finger_a=rng.random((3, 8, 8)), finger_b=rng.random((3, 8, 8)))
        vis = w.VisualObs(image=rng.random((3, 8, 8)))
        assert M.predict_match(params, tac, vis) == M.predict_match(params, tac, vis)

    def test_uniform_output_loss_is_ln2(self):
        params = M.init_model(TINY, 9)
        # zero the output layer: logit 0 everywhere -> p = 0.5
        params.w_out.data[:] = 0.0
        ta, tb, vi, y = tiny_batch(n=6)
        loss = M.loss_on_batch(params, ta, tb, vi, y, training=False)
        assert math.isclose(loss.item(), math.log(2.0), rel_tol=1e-12)

    def test_duplicating_batch_leaves_loss_unchanged(self):
        params = M.init_model(TINY, 10)
        ta, tb, vi, y = tiny_batch(n=3)
        single = M.loss_on_batch(params, ta, tb, vi, y, training=False)
        doubled = M.loss_on_batch(
            params,
            np.concatenate([ta, ta]),
            np.concatenate([tb, tb]),
            np.concatenate([vi, vi]),
            np.concatenate([y, y]),
            training=False,
        )
        assert math.isclose(single.item(), doubled.item(), rel_tol=1e-12)

    def test_composite_gradient_check(self):
        params = M.init_model(TINY, 11)
        nrng = np.random.default_rng(12)
        for name, t in params.named_parameters():
            if t.data.ndim == 1:  # keep pre-activations off exact relu kinks
                t.data = t.data + nrng.uniform(0.005, 0.02, t.data.shape)
        ta, tb, vi, y = tiny_batch(seed=13)
        err = ad.grad_check(
            lambda *p: M.loss_on_batch(
                params, ta, tb, vi, y, training=True, rng=np.random.default_rng(99)
            ),
            params.parameters(),
        )
        assert err < 1e-4


class TestTraining:
    def test_init_loss_near_ln2_at_default_config(self, store16):
        pairs = d.build_pairs(store16, range(8), 4, 4, seed=19)
        ta, tb, vi, y = M.batch_arrays(store16, pairs[:200])
        params = M.init_model(M.EncoderConfig(), 0)
        loss = M.loss_on_batch(params, ta, tb, vi, y, training=False)
        assert abs(loss.item() - math.log(2.0)) < 0.05

    def test_training_improves_loss_and_reproduces(self, store16):
        pairs = d.build_pairs(store16, range(8), 4, 4, seed=20)
        tcfg = M.TrainConfig(seed=21, iterations=120, batch_size=16)
        ecfg = M.EncoderConfig(conv_channels=(4, 8), feature_dim=8, hidden_dim=16)
        params, history = M.train(store16, pairs, tcfg, ecfg)
        assert abs(history[0][1] - math.log(2.0)) < 0.1  # tiny encoder, wider logits
        assert history[-1][1] < history[0][1]
        params2, history2 = M.train(store16, pairs, tcfg, ecfg)
        assert history == history2
        for (_, a), (_, b) in zip(params.named_parameters(), params2.named_parameters()):
            np.testing.assert_array_equal(a.data, b.data)

    def test_empty_pairs_rejected(self, store16):
        with pytest.raises(ConfigError):
            M.train(store16, [], M.TrainConfig(seed=0, iterations=1))

    def test_fresh_init_is_chance_level(self, store16):
        pairs = d.build_pairs(store16, range(8), 4, 4, seed=22)[:1000]
        # synthesize a balanced >=1000-pair list by reusing the builder twice
        pairs += d.build_pairs(store16, range(8), 4, 4, seed=23)[: 1000 - len(pairs)]
        params = M.init_model(M.EncoderConfig(conv_channels=(4, 8), feature_dim=8,
                                              hidden_dim=16), 24)
        scorer = MatchNetScorer(params, store16)
        correct = 0
        for p in pairs:
            prob_is_match = scorer.score(p.tactile_episode_id, p.visual_episode_id) >= math.log(0.5)
            correct += prob_is_match == bool(p.label)
        assert 0.45 <= correct / len(pairs) <= 0.55


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        params = M.init_model(TINY, 30)
        M.save_model(params, tmp_path / "model")
        loaded = M.load_model(tmp_path / "model")
        assert loaded.config == TINY
        for (na, ta), (nb, tb) in zip(
            params.named_parameters(), loaded.named_parameters()
        ):
            assert na == nb
            np.testing.assert_array_equal(ta.data, tb.data)

    def test_round_trip_preserves_predictions(self, tmp_path):
        params = M.init_model(TINY, 31)
        rng = np.random.default_rng(5)
        tac = w.TactileObs(finger_a=rng.random((3, 8, 8)), finger_b=rng.random((3, 8, 8)))
        vis = w.VisualObs(image=rng.random((3, 8, 8)))
        M.save_model(params, tmp_path / "model")
        loaded = M.load_model(tmp_path / "model")
        assert M.predict_match(params, tac, vis) == M.predict_match(loaded, tac, vis)

    def test_loss_history_csv(self, tmp_path):
        M.save_loss_history([(1, 0.7), (50, 0.64)], tmp_path / "loss.csv")
        lines = (tmp_path / "loss.csv").read_text().splitlines()
        assert lines[0] == "iteration,loss"
        assert lines[1] == "1,0.7"
