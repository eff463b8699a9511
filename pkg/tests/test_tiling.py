"""Receptive-field margins, tile plans and the stitching analysis."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from saint import ami
from saint.fileio import read_csv, read_pgm
from saint.tensor import Tensor, conv2d, no_grad, relu
from saint.tiling import (
    ConvChainSpec,
    ami_feature_net,
    boundary_distance,
    margin,
    plan,
    run_stitch_analysis,
    seam_mask,
    stitch_report,
    tiled_infer,
)


def chain_net(kernels, seed):
    """Single-channel zero-padded conv chain with ReLU between layers."""
    r = np.random.default_rng(seed)
    ws = [Tensor(r.normal(size=(1, 1, k, k)) / k) for k in kernels]
    bs = [Tensor(r.normal(size=1) * 0.1) for _ in kernels]

    def net(img):
        x = Tensor(np.asarray(img, dtype=np.float64)[None])
        with no_grad():
            for i, (w, b) in enumerate(zip(ws, bs)):
                x = conv2d(x, w, b)
                if i < len(ws) - 1:
                    x = relu(x)
        return x.data[0]

    return net, ConvChainSpec(tuple(kernels))


class TestMargin:
    def test_52_layer_chain(self):
        assert margin(ConvChainSpec((3,) * 52)) == 52
        assert 2 * margin([3] * 52) == 104

    def test_small(self):
        assert margin([3]) == 1
        assert margin([3, 5, 3]) == 4

    def test_errors(self):
        with pytest.raises(ValueError):
            margin([3, 4])
        with pytest.raises(ValueError):
            margin([])

    def test_ami_chain(self):
        assert margin(ami.DESK.kernel_chain()) == 9


class TestPlan:
    def test_single_tile_clamped(self):
        tp = plan((64,), 64, 3)
        assert len(tp.tiles) == 1
        assert tp.tiles[0].core == ((0, 64),) and tp.tiles[0].fetch == ((0, 64),)

    def test_exact_partition(self):
        tp = plan((10,), 4, 0)
        assert [t.core[0] for t in tp.tiles] == [(0, 4), (4, 8), (8, 10)]

    def test_huge_margin(self):
        tp = plan((10, 7), 3, 50)
        assert all(t.fetch == ((0, 10), (0, 7)) for t in tp.tiles)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.integers(1, 12), min_size=1, max_size=3), st.integers(1, 12), st.integers(0, 5))
    def test_coverage(self, grid, core, m):
        if core > min(grid):
            return
        tp = plan(grid, core, m)
        count = np.zeros(grid, dtype=int)
        for t in tp.tiles:
            count[t.core_slices()] += 1
            for (c0, c1), (f0, f1), n in zip(t.core, t.fetch, grid):
                assert 0 <= f0 <= c0 < c1 <= f1 <= n
        assert np.all(count == 1)

    def test_errors(self):
        with pytest.raises(ValueError):
            plan((8, 8), 0, 1)
        with pytest.raises(ValueError):
            plan((8, 8), 9, 1)


class TestTiledInfer:
    def test_identity_net(self):
        img = np.random.default_rng(0).random((13, 11))
        assert np.array_equal(tiled_infer(img, lambda x: x.copy(), plan(img.shape, 4, 0)), img)

    def test_grid_mismatch(self):
        with pytest.raises(ValueError):
            tiled_infer(np.zeros((5, 5)), lambda x: x, plan((6, 6), 3, 0))

    @settings(max_examples=15, deadline=None)
    @given(st.lists(st.sampled_from([1, 3, 5]), min_size=1, max_size=4), st.integers(0, 1000),
           st.integers(4, 9))
    def test_sufficient_margin(self, kernels, seed, core):
        net, spec = chain_net(kernels, seed)
        img = np.random.default_rng(seed).random((20, 17))
        tiled = tiled_infer(img, net, plan(img.shape, core, margin(spec)))
        assert np.max(np.abs(tiled - net(img))) < 1e-9

    @settings(max_examples=15, deadline=None)
    @given(st.lists(st.sampled_from([3, 5]), min_size=1, max_size=4), st.integers(0, 1000),
           st.integers(4, 9), st.data())
    def test_short_margin_deviation_in_band(self, kernels, seed, core, data):
        net, spec = chain_net(kernels, seed)
        m = data.draw(st.integers(0, margin(spec) - 1))
        img = np.random.default_rng(seed).random((20, 17))
        tp = plan(img.shape, core, m)
        diff = np.abs(tiled_infer(img, net, tp) - net(img))
        assert np.all(diff[~seam_mask(tp, margin(spec))] < 1e-12)


class TestReport:
    def test_identical_ratio_one(self):
        tp = plan((8, 8), 4, 0)
        rep = stitch_report(np.ones((8, 8)), np.ones((8, 8)), tp, 1)
        assert (rep.seam_mad, rep.interior_mad, rep.ratio) == (0.0, 0.0, 1.0)

    def test_band_width(self):
        tp = plan((12,), 6, 0)
        assert np.flatnonzero(seam_mask(tp, 2)).tolist() == [4, 5, 6, 7]

    def test_boundary_distance(self):
        tp = plan((12,), 6, 0)
        assert boundary_distance(tp, (5,)) == 0 and boundary_distance(tp, (6,)) == 0
        assert boundary_distance(tp, (2,)) == 3

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            stitch_report(np.zeros((4, 4)), np.zeros((4, 5)), plan((4, 4), 2, 0), 1)

    def test_ami_chain_analysis_writes(self, tmp_path):
        ps = ami.init_ami(ami.DESK, 0)
        net, spec = ami_feature_net(ps)
        img = np.random.default_rng(0).random((40, 40))
        rep0 = run_stitch_analysis(img, net, spec, 16, 0, tmp_path)
        assert rep0.ratio > 1
        assert 0 <= rep0.argmax_seam_distance < margin(spec)
        rows = read_csv(tmp_path / "stitch_m0.csv")
        assert list(rows[0]) == ["tile_id", "seam_mad", "interior_mad", "ratio"]
        assert len(rows) == 9 + 1
        assert read_pgm(tmp_path / "stitch_m0.pgm").shape == (40, 40)
        full = run_stitch_analysis(img, net, spec, 16, margin(spec))
        assert full.max_dev < 1e-9
