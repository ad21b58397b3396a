import math

import numpy as np
import pytest

from meshsmile.classifier import (
    ClassifierHead,
    MeshSmileNet,
    ModelConfig,
    Prediction,
    classify_head,
    clip_scores,
    forward_clip,
    head_logits,
    normalize_tensor,
    predict_video,
)
from meshsmile.errors import ConfigInvalid, ShapeMismatch
from meshsmile.gradsuite import TINY_MODEL
from meshsmile.landmark_io import Clip, Label, LandmarkSequence, sample_eval_clips
from meshsmile.numerics.gradcheck import grad_check_many
from meshsmile.numerics.tensor import Tensor

SMALL = ModelConfig(n_landmarks=12, tokens=4, clip_len=4, d=8, heads=2, curves=2, curve_len=3,
                    knn=3, spatial_blocks=1, temporal_blocks=1)


def _head(d=4, pool="mean"):
    return ClassifierHead(d, np.random.default_rng(0), pool=pool)


def _seq(n, cfg=SMALL, seed=0):
    rng = np.random.default_rng(seed)
    base = rng.normal(size=(1, cfg.n_landmarks, 3))
    return LandmarkSequence(base + 0.05 * rng.normal(size=(n, cfg.n_landmarks, 3)).cumsum(0), 25.0)


class TestHead:
    def test_zero_linear_gives_half(self):
        h = _head()
        h.fc.W.data[...] = 0.0
        z = Tensor(np.random.default_rng(1).normal(size=(3, 2, 5, 4)))
        np.testing.assert_allclose(classify_head(z, h).data, 0.5)

    def test_bias_ten(self):
        h = _head()
        h.fc.W.data[...] = 0.0
        h.fc.b.data[...] = 10.0
        score = classify_head(Tensor(np.ones((1, 2, 3, 4))), h).data[0]
        assert score == pytest.approx(0.9999546021312976, abs=1e-15)
        assert score == pytest.approx(1 / (1 + math.exp(-10)), abs=1e-15)

    def test_constant_pooled_vector(self):
        h = _head()
        h.ln.beta.data[...] = [0.5, -1.0, 2.0, 0.0]
        h.fc.W.data[...] = [[1.0, 1.0, 1.0, 1.0]]
        h.fc.b.data[...] = -1.0
        score = classify_head(Tensor(np.full((1, 3, 2, 4), 7.0)), h).data[0]
        assert score == pytest.approx(1 / (1 + math.exp(-0.5)), rel=1e-12)

    def test_mean_and_max_pool(self):
        z = np.random.default_rng(2).normal(size=(2, 3, 4, 4))
        for pool, red in (("mean", np.mean), ("max", np.max)):
            h = _head(pool=pool)
            pooled = red(z.reshape(2, -1, 4), axis=1)
            mu = pooled.mean(1, keepdims=True)
            var = pooled.var(1, keepdims=True)
            ln = (pooled - mu) / np.sqrt(var + 1e-5)
            want = ln @ h.fc.W.data[0] + h.fc.b.data[0]
            np.testing.assert_allclose(head_logits(Tensor(z), h).data, want, rtol=1e-10)

    def test_width_mismatch(self):
        with pytest.raises(ShapeMismatch):
            classify_head(Tensor(np.zeros((1, 2, 3, 5))), _head())

    def test_threshold_decision_under_logit_scaling(self):
        h = _head()
        z = Tensor(np.random.default_rng(3).normal(size=(6, 2, 3, 4)))
        logits = head_logits(z, h).data
        for scale in (0.1, 1.0, 7.0):
            s = 1 / (1 + np.exp(-scale * logits))
            np.testing.assert_array_equal(s >= 0.5, logits >= 0)

    def test_prediction_label(self):
        assert Prediction(0.5).label is Label.POSED
        assert Prediction(0.4999).label is Label.SPONTANEOUS


class TestNormalizeTensor:
    def test_frame_mode(self):
        x = np.random.default_rng(0).normal(size=(2, 3, 5, 3)) * 4 + 2
        out = normalize_tensor(Tensor(x), "frame").data
        np.testing.assert_allclose(out.mean(axis=-2), 0.0, atol=1e-12)
        np.testing.assert_allclose(np.linalg.norm(out, axis=-1).mean(axis=-1), 1.0, rtol=1e-12)

    def test_video_mode_uses_first_frame(self):
        x = np.random.default_rng(0).normal(size=(1, 3, 5, 3))
        x[0, 1] = x[0, 0] + 1.0  # pure translation
        out = normalize_tensor(Tensor(x), "video").data
        frame0 = normalize_tensor(Tensor(x), "frame").data[0, 0]
        np.testing.assert_allclose(out[0, 0], frame0, atol=1e-12)
        assert not np.allclose(out[0, 1], out[0, 0])

    def test_off(self):
        x = Tensor(np.ones((1, 2, 4, 3)))
        assert normalize_tensor(x, "off") is x


class TestModel:
    def test_config_validation(self):
        with pytest.raises(ConfigInvalid):
            ModelConfig(d=10, heads=4)
        with pytest.raises(ConfigInvalid):
            ModelConfig(pool="median")
        with pytest.raises(Exception):
            ModelConfig(n_landmarks=5, knn=5)

    def test_default_architecture_contract(self):
        cfg = ModelConfig(d=16, curves=2, curve_len=3, knn=4)
        model = MeshSmileNet(cfg, 0)
        x = np.random.default_rng(0).normal(size=(1, 16, 478, 3))
        score = model(x)
        assert score.shape == (1,)
        assert 0.0 <= score.data[0] <= 1.0
        assert len(model.trajectory.applied) == 9
        assert model.trajectory.mix_W.shape == (32, 478)

    def test_eval_deterministic(self):
        model = MeshSmileNet(SMALL, 0)
        clip = Clip(_seq(4).coords, 25.0)
        assert forward_clip(model, clip).score == forward_clip(model, clip).score

    def test_wrong_clip_length(self):
        model = MeshSmileNet(SMALL, 0)
        with pytest.raises(ShapeMismatch):
            model(np.zeros((1, 5, 12, 3)))
        with pytest.raises(ShapeMismatch):
            model(np.zeros((1, 4, 11, 3)))

    def test_train_mode_runs(self):
        model = MeshSmileNet(SMALL, 0)
        s = model(_seq(4).coords[None], "train", np.random.default_rng(0))
        assert 0.0 <= s.data[0] <= 1.0

    def test_checkpoint_round_trip(self, tmp_path):
        model = MeshSmileNet(SMALL, 3)
        model.save(tmp_path / "m.mswt")
        back = MeshSmileNet.load(tmp_path / "m.mswt")
        assert back.cfg == SMALL
        # values are stored as f32
        for (name, a), (_, b) in zip(model.named_parameters(), back.named_parameters()):
            np.testing.assert_array_equal(b.data, a.data.astype(np.float32).astype(np.float64), err_msg=name)
        x = _seq(4).coords[None]
        assert back(x).data[0] == pytest.approx(model(x).data[0], abs=1e-6)

    def test_tiny_full_loss_gradcheck(self):
        from meshsmile.gradsuite import tiny_inputs
        from meshsmile.numerics.functional import bce_loss
        cfg = ModelConfig(**{**TINY_MODEL.to_dict(), "spatial_blocks": 1, "temporal_blocks": 1})
        rng = np.random.default_rng(11)
        model = MeshSmileNet(cfg, rng)
        data, y = tiny_inputs(cfg, rng, 1)
        x = Tensor(data, requires_grad=True)
        rep = grad_check_many(lambda: bce_loss(model(x, "eval"), y[:1]),
                              [("input", x)] + list(model.named_parameters()))
        assert rep.passed, rep


class TestPredictVideo:
    def test_mean_of_five_clips(self):
        model = MeshSmileNet(SMALL, 0)
        seq = _seq(30)
        scores = clip_scores(model, seq, 5)
        assert scores.shape == (5,)
        singles = [forward_clip(model, c).score for c in sample_eval_clips(seq, 4, 5)]
        np.testing.assert_allclose(scores, singles, rtol=1e-12)
        assert predict_video(model, seq).score == pytest.approx(float(np.mean(singles)), abs=1e-15)

    def test_short_video_single_clip_score(self):
        model = MeshSmileNet(SMALL, 0)
        seq = _seq(4)
        assert predict_video(model, seq).score == pytest.approx(forward_clip(model, Clip(seq.coords, 25.0)).score,
                                                                abs=1e-15)

    def test_hand_mean(self, monkeypatch):
        import meshsmile.classifier as C
        monkeypatch.setattr(C, "clip_scores", lambda *a, **k: np.array([0.2, 0.4, 0.6, 0.8, 1.0]))
        assert C.predict_video(None, None).score == pytest.approx(0.6, abs=1e-15)
