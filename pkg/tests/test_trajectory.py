import numpy as np
import pytest

from meshsmile.errors import ShapeMismatch
from meshsmile.numerics.gradcheck import grad_check_many
from meshsmile.numerics.tensor import Tensor
from meshsmile.trajectory import (
    TrajectoryConfig,
    TrajectoryNet,
    mix_tokens,
    spatial_pass,
    temporal_pass,
    trajectory_forward,
)

SMALL = TrajectoryConfig(n_landmarks=10, tokens=4, clip_len=5, d=8, heads=2,
                         spatial_blocks=2, temporal_blocks=2)


def _net(cfg=SMALL, seed=0):
    return TrajectoryNet(cfg, np.random.default_rng(seed))


def _zero_blocks(net):
    for blk in net.spatial + net.temporal:
        for _, p in blk.named_parameters():
            p.data[...] = 0.0


def _x(shape, seed=1):
    return Tensor(np.random.default_rng(seed).normal(size=shape))


class TestMixTokens:
    def test_identity(self):
        cfg = TrajectoryConfig(n_landmarks=4, tokens=4, clip_len=3, d=8, heads=2)
        net = _net(cfg)
        net.mix_W.data[...] = np.eye(4)
        h = _x((2, 3, 4, 8))
        np.testing.assert_allclose(mix_tokens(h, net).data, h.data)

    def test_zero(self):
        net = _net()
        net.mix_W.data[...] = 0.0
        assert np.all(mix_tokens(_x((1, 5, 10, 8)), net).data == 0.0)

    def test_formula(self):
        net = _net()
        h = _x((2, 5, 10, 8))
        want = np.einsum("tl,bnld->bntd", net.mix_W.data, h.data)
        np.testing.assert_allclose(mix_tokens(h, net).data, want, rtol=1e-12)

    def test_default_token_count(self):
        cfg = TrajectoryConfig(d=8, heads=2)
        net = _net(cfg)
        assert mix_tokens(_x((1, 16, 478, 8)), net).shape == (1, 16, 32, 8)

    def test_landmark_mismatch(self):
        with pytest.raises(ShapeMismatch):
            mix_tokens(_x((1, 5, 9, 8)), _net())


class TestSpatialTemporal:
    def test_zero_blocks_identity(self):
        net = _net()
        _zero_blocks(net)
        x = _x((2, 5, 4, 8))
        np.testing.assert_allclose(spatial_pass(x, net).data, x.data)
        np.testing.assert_allclose(temporal_pass(x, net).data, x.data)

    def test_spatial_no_cross_frame_flow(self):
        net = _net()
        x = _x((1, 5, 4, 8)).data
        y = x.copy()
        y[0, 2] = 0.0
        a, b = spatial_pass(Tensor(x), net).data, spatial_pass(Tensor(y), net).data
        changed = np.abs(a - b).reshape(5, -1).max(axis=1) > 0
        assert changed.tolist() == [False, False, True, False, False]

    def test_spatial_frame_permutation(self):
        net = _net()
        x = _x((1, 5, 4, 8))
        perm = np.array([3, 0, 4, 1, 2])
        a = spatial_pass(x, net).data
        b = spatial_pass(Tensor(x.data[:, perm]), net).data
        np.testing.assert_allclose(b, a[:, perm], rtol=1e-12, atol=1e-12)

    def test_temporal_no_cross_token_flow(self):
        net = _net()
        net.pos.data[...] = np.random.default_rng(3).normal(size=net.pos.shape)
        x = _x((1, 5, 4, 8)).data
        y = x.copy()
        y[0, :, 1] = 0.0
        a, b = temporal_pass(Tensor(x), net).data, temporal_pass(Tensor(y), net).data
        changed = np.abs(a - b).transpose(2, 0, 1, 3).reshape(4, -1).max(axis=1) > 0
        assert changed.tolist() == [False, True, False, False]

    def test_temporal_token_permutation(self):
        net = _net()
        x = _x((1, 5, 4, 8))
        perm = np.array([2, 0, 3, 1])
        a = temporal_pass(x, net).data
        b = temporal_pass(Tensor(x.data[:, :, perm]), net).data
        np.testing.assert_allclose(b, a[:, :, perm], rtol=1e-12, atol=1e-12)

    def test_positional_embedding_breaks_reversal_symmetry(self):
        net = _net()
        x = _x((1, 5, 4, 8))
        rev = Tensor(x.data[:, ::-1].copy())
        # zero embedding: attention over frames is order-equivariant
        np.testing.assert_allclose(temporal_pass(rev, net).data, temporal_pass(x, net).data[:, ::-1], atol=1e-12)
        net.pos.data[...] = np.random.default_rng(7).normal(size=net.pos.shape)
        assert not np.allclose(temporal_pass(rev, net).data, temporal_pass(x, net).data[:, ::-1])

    def test_positional_embedding_zero_init(self):
        assert np.all(_net().pos.data == 0.0)

    def test_clip_longer_than_table(self):
        with pytest.raises(ShapeMismatch):
            temporal_pass(_x((1, 6, 4, 8)), _net())


class TestTrajectoryForward:
    def test_composition(self):
        net = _net()
        net.pos.data[...] = 0.3
        h = _x((2, 5, 10, 8))
        want = temporal_pass(spatial_pass(mix_tokens(h, net), net), net).data
        np.testing.assert_allclose(trajectory_forward(h, net).data, want, rtol=1e-12)

    def test_default_schedule(self):
        cfg = TrajectoryConfig()
        assert cfg.schedule() == [("spatial", i) for i in range(6)] + [("temporal", i) for i in range(3)]

    def test_interleaved_schedule(self):
        cfg = TrajectoryConfig(block_order="interleaved")
        kinds = "".join(k[0] for k, _ in cfg.schedule())
        assert kinds == "sstsstsst"

    def test_ablation_schedules(self):
        assert TrajectoryConfig(attention="spatial").schedule() == [("spatial", i) for i in range(6)]
        assert TrajectoryConfig(attention="time").schedule() == [("temporal", i) for i in range(3)]
        with pytest.raises(ValueError):
            TrajectoryConfig(attention="joint").schedule()

    def test_default_shape_and_applied(self):
        cfg = TrajectoryConfig(n_landmarks=478, tokens=32, clip_len=16, d=16, heads=4)
        net = _net(cfg)
        z = trajectory_forward(_x((1, 16, 478, 16)), net)
        assert z.shape == (1, 16, 32, 16)
        assert len(net.applied) == 9
        assert sum(k == "spatial" for k, _ in net.applied) == 6

    def test_gradcheck(self):
        cfg = TrajectoryConfig(n_landmarks=6, tokens=3, clip_len=4, d=4, heads=2,
                               spatial_blocks=1, temporal_blocks=1)
        net = _net(cfg, 2)
        net.pos.data[...] = np.random.default_rng(3).normal(size=net.pos.shape) * 0.1
        h = Tensor(np.random.default_rng(4).normal(size=(1, 4, 6, 4)), requires_grad=True)
        w = np.random.default_rng(5).normal(size=(1, 4, 3, 4))
        rep = grad_check_many(lambda: (trajectory_forward(h, net) * w).sum(),
                              [("h", h)] + list(net.named_parameters()))
        assert rep.passed, rep
