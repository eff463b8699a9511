"""Residual fusion network."""

import numpy as np
import pytest

from saint import rfn
from saint.optim import Adam
from saint.rfn import RfnConfig
from saint.tensor import Tensor, gradcheck, mean, mul
from saint.volume import Volume, decimate_z

MICRO = RfnConfig(rdb_count=1, convs_per_rdb=2, growth_rate=2, first_conv_channels=3)


@pytest.fixture
def pair():
    r = np.random.default_rng(0)
    return r.random((6, 5)), r.random((6, 5))


@pytest.fixture(scope="module")
def live_ps():
    """Micro RFN with a non-zero head so the residual path carries gradient."""
    ps = rfn.init_rfn(MICRO, seed=1)
    r = np.random.default_rng(1)
    ps["head.w"].data = r.normal(scale=0.3, size=ps["head.w"].shape)
    for name, t in ps.tensors.items():
        if name.endswith(".b"):
            t.data = r.normal(scale=0.1, size=t.shape)
    return ps


class TestResidualIdentity:
    def test_zero_head_is_average(self, pair):
        sag, cor = pair
        ps = rfn.init_rfn(MICRO, seed=4)
        assert np.array_equal(rfn.fuse_slice(sag, cor, ps), 0.5 * (sag + cor))

    def test_equal_views(self, pair):
        s = pair[0]
        assert np.array_equal(rfn.fuse_slice(s, s, rfn.init_rfn(rfn.DESK, 0)), s)

    def test_paper_config_zero_head(self, pair):
        sag, cor = pair
        assert np.array_equal(rfn.fuse_slice(sag, cor, rfn.init_rfn(rfn.PAPER, 0)), 0.5 * (sag + cor))

    def test_average_term_symmetric(self, pair, live_ps):
        sag, cor = pair
        a = rfn.fuse_slice(sag, cor, live_ps)
        b = rfn.fuse_slice(cor, sag, live_ps)
        # same average; the residual sees the ordered pair
        assert np.array_equal(0.5 * (sag + cor), 0.5 * (cor + sag))
        assert np.array_equal(a, rfn.fuse_slice(sag, cor, live_ps))
        assert not np.array_equal(a, b)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            rfn.fuse_slice(np.zeros((3, 3)), np.zeros((3, 4)), rfn.init_rfn(MICRO))


def test_paper_defaults():
    cfg = rfn.PAPER
    assert (cfg.rdb_count, cfg.convs_per_rdb, cfg.growth_rate, cfg.first_conv_channels,
            cfg.input_channels, cfg.kernel_size) == (5, 4, 16, 32, 2, 3)


class TestGradients:
    @pytest.mark.parametrize("name", ["trunk.sfe1.w", "trunk.rdb0.conv0.w", "trunk.gff2.w", "head.w", "head.b"])
    def test_gradcheck(self, live_ps, pair, name):
        sag, cor = pair
        weights = Tensor(np.random.default_rng(2).normal(size=(1,) + sag.shape))
        param = live_ps[name]

        def f(t):
            saved = live_ps.tensors[name]
            live_ps.tensors[name] = t
            try:
                return mean(mul(rfn.fuse_forward(sag[None], cor[None], live_ps), weights))
            finally:
                live_ps.tensors[name] = saved

        idx = np.random.default_rng(3).choice(param.data.size, size=min(10, param.data.size), replace=False)
        assert gradcheck(f, Tensor(param.data.copy()), indices=idx) < 1e-4

    def test_input_gradcheck(self, live_ps, pair):
        sag, cor = pair

        def f(t):
            return mean(mul(rfn.fuse_forward(t, Tensor(cor[None]), live_ps), Tensor(sag[None])))

        assert gradcheck(f, Tensor(sag[None].copy())) < 1e-3


class TestFuseVolume:
    @pytest.fixture
    def views(self):
        r = np.random.default_rng(5)
        dense = Volume(r.random((5, 6, 12)), (1.0, 1.0, 0.5))
        sparse = decimate_z(dense, 3)
        sag = dense.with_data(dense.data + 0.01 * r.normal(size=dense.dims))
        cor = dense.with_data(dense.data - 0.01 * r.normal(size=dense.dims))
        return sag, cor, sparse

    def test_observed_copied_and_dims(self, views, live_ps):
        sag, cor, sparse = views
        out = rfn.fuse_volume(sag, cor, sparse, 3, live_ps)
        assert out.dims == sag.dims
        assert decimate_z(out, 3).equals(sparse)

    def test_synthesized_fused(self, views, live_ps):
        sag, cor, sparse = views
        out = rfn.fuse_volume(sag, cor, sparse, 3, live_ps, batch=3)
        z = 4
        assert np.array_equal(out.data[:, :, z], rfn.fuse_slice(sag.data[:, :, z], cor.data[:, :, z], live_ps))

    def test_r1(self, live_ps):
        v = Volume(np.random.default_rng(6).random((4, 4, 5)), (1, 1, 1))
        assert rfn.fuse_volume(v, v, v, 1, live_ps).equals(v)

    def test_inconsistent_dims(self, views, live_ps):
        sag, cor, sparse = views
        with pytest.raises(ValueError):
            rfn.fuse_volume(sag, cor, sparse, 2, live_ps)


class TestTraining:
    def _data(self, seed=0):
        r = np.random.default_rng(seed)
        gt = r.random((4, 10, 10))
        sag = gt + 0.1 * np.sin(np.arange(10))[None, None, :]
        cor = gt + 0.1 * np.cos(np.arange(10))[None, :, None]
        return sag, cor, gt

    def test_zero_loss_at_average(self):
        sag, cor, _ = self._data()
        ps = rfn.init_rfn(MICRO, 0)
        loss = rfn.rfn_train_step((sag, cor, 0.5 * (sag + cor)), ps, Adam(ps.values()))
        assert loss == 0.0

    def _trace(self, steps):
        sag, cor, gt = self._data()
        ps = rfn.init_rfn(rfn.DESK, 0)
        opt = Adam(ps.values(), lr=1e-3)
        r = np.random.default_rng(1)
        out = []
        for _ in range(steps):
            i = r.choice(4, size=2, replace=False)
            out.append(rfn.rfn_train_step((sag[i], cor[i], gt[i]), ps, opt))
        return np.array(out), ps

    def test_loss_decreases(self):
        losses, _ = self._trace(200)
        w = losses.reshape(10, 20).mean(axis=1)
        assert w[-1] < w[0]

    def test_deterministic(self):
        a, pa = self._trace(4)
        b, pb = self._trace(4)
        assert np.array_equal(a, b) and pa.digest() == pb.digest()

    def test_gt_shape_checked(self):
        ps = rfn.init_rfn(MICRO, 0)
        with pytest.raises(ValueError):
            rfn.rfn_loss(np.zeros((1, 4, 4)), np.zeros((1, 4, 4)), np.zeros((1, 4, 5)), ps)
