"""Volumes, views, decimation, phantoms and the on-disk formats."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from saint.fileio import (
    MAGIC,
    ContainerError,
    export_csv,
    export_pgm,
    load_svol,
    read_csv,
    read_pgm,
    save_svol,
    svol_header,
)
from saint.volume import (
    SliceStack,
    Volume,
    assemble,
    decimate_z,
    extract_view,
    phantom,
    sparse_pair,
)


def random_volume(seed, dims=(5, 4, 9), spacing=(0.7, 0.9, 1.3)):
    return Volume(np.random.default_rng(seed).random(dims), spacing)


class TestVolume:
    def test_rejects_bad_spacing(self):
        with pytest.raises(ValueError):
            Volume(np.zeros((2, 2, 2)), (1.0, 0.0, 1.0))

    def test_rejects_wrong_rank(self):
        with pytest.raises(ValueError):
            Volume(np.zeros((2, 2)), (1.0, 1.0, 1.0))

    def test_dims(self):
        assert random_volume(0).dims == (5, 4, 9)


class TestDecimate:
    def test_index_arithmetic(self):
        v = random_volume(1)
        d = decimate_z(v, 4)
        assert d.dims[2] == 3
        assert np.array_equal(d.data, v.data[:, :, [0, 4, 8]])

    def test_identity(self):
        v = random_volume(2)
        assert decimate_z(v, 1).equals(v)

    def test_spacing_scales(self):
        v = Volume(np.zeros((2, 2, 10)), (1.0, 1.0, 1.0))
        assert decimate_z(v, 5).spacing == (1.0, 1.0, 5.0)

    @pytest.mark.parametrize("r", [0, -1, 10])
    def test_errors(self, r):
        with pytest.raises(ValueError):
            decimate_z(random_volume(3), r)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 20), st.integers(1, 6))
    def test_output_length(self, z, r):
        if r > z:
            return
        v = Volume(np.zeros((2, 2, z)), (1.0, 1.0, 1.0))
        assert decimate_z(v, r).dims[2] == (z - 1) // r + 1

    def test_composition(self):
        v = random_volume(4, dims=(3, 3, 17))
        assert decimate_z(decimate_z(v, 2), 2).equals(decimate_z(v, 4))

    def test_sparse_pair_crops(self):
        gt, sparse = sparse_pair(random_volume(5, dims=(3, 3, 10)), 3)
        assert gt.dims[2] == 9 and sparse.dims[2] == 3


class TestViews:
    def test_sagittal_shape(self):
        v = Volume(np.zeros((2, 3, 4)), (1.0, 2.0, 3.0))
        s = extract_view(v, "sagittal")
        assert len(s) == 2 and s.slices.shape[1:] == (3, 4) and s.spacing == (2.0, 3.0)

    def test_coronal_and_axial_spacing(self):
        v = Volume(np.zeros((2, 3, 5)), (1.0, 2.0, 3.0))
        assert extract_view(v, "coronal").spacing == (1.0, 3.0)
        ax = extract_view(v, "axial")
        assert len(ax) == 5 and ax.spacing == (1.0, 2.0)

    @pytest.mark.parametrize("view", ["sagittal", "coronal", "axial"])
    def test_round_trip(self, view):
        v = random_volume(6)
        assert assemble(view, extract_view(v, view)).equals(v)

    @pytest.mark.parametrize("view", ["sagittal", "coronal", "axial"])
    def test_round_trip_from_list(self, view):
        v = random_volume(7)
        stack = extract_view(v, view)
        assert assemble(view, list(stack.slices), v.spacing).equals(v)

    def test_ragged(self):
        with pytest.raises(ValueError, match="ragged"):
            assemble("axial", [np.zeros((2, 2)), np.zeros((2, 3))], (1, 1, 1))

    def test_unknown_view(self):
        with pytest.raises(ValueError):
            extract_view(random_volume(8), "oblique")

    def test_slice_stack_len(self):
        assert len(SliceStack("axial", np.zeros((4, 2, 2)), (1.0, 1.0))) == 4


class TestPhantom:
    @pytest.mark.parametrize("recipe", ["ellipsoids", "laminae", "ramp", "laminae+ellipsoids"])
    def test_deterministic_and_normalized(self, recipe):
        a = phantom((8, 9, 10), (1.0, 1.0, 2.0), 3, recipe)
        b = phantom((8, 9, 10), (1.0, 1.0, 2.0), 3, recipe)
        assert np.array_equal(a.data, b.data)
        assert a.data.min() == 0.0 and a.data.max() == 1.0

    def test_ramp_increasing_in_z(self):
        v = phantom((8, 8, 12), (1.0, 1.0, 1.0), 0, "ramp")
        assert np.all(np.diff(v.data, axis=2) > 0)

    def test_laminae_period_in_voxels(self):
        v = phantom((8, 8, 24), (1.0, 1.0, 1.0), 5, "laminae", period=4.0)
        assert np.max(np.abs(v.data[:, :, 4:] - v.data[:, :, :-4])) < 1e-12
        assert np.max(np.abs(v.data[:, :, 2:] - v.data[:, :, :-2])) > 0.5

    def test_laminae_period_tracks_spacing(self):
        # 4 mm at 2 mm per slice is 2 voxels
        v = phantom((8, 8, 16), (1.0, 1.0, 2.0), 5, "laminae", period=4.0)
        assert np.max(np.abs(v.data[:, :, 2:] - v.data[:, :, :-2])) < 1e-12

    def test_degenerate_dims(self):
        with pytest.raises(ValueError):
            phantom((4, 8, 8), (1, 1, 1), 0, "ramp")

    def test_unknown_recipe(self):
        with pytest.raises(ValueError):
            phantom((8, 8, 8), (1, 1, 1), 0, "spiral")


class TestSvol:
    def test_round_trip(self, tmp_path):
        v = Volume(np.random.default_rng(0).random((3, 4, 5)), (0.5, 0.6, 2.5), (-3.0, 7.0))
        path = save_svol(v, tmp_path / "v.svol")
        w = load_svol(path)
        assert w.equals(v) and w.norm == v.norm

    def test_z_major_layout(self, tmp_path):
        data = np.arange(24, dtype=np.float64).reshape(2, 3, 4)
        path = save_svol(Volume(data, (1, 1, 1)), tmp_path / "v.svol")
        raw = path.read_bytes()
        payload = np.frombuffer(raw[raw.index(b"\n", len(MAGIC)) + 1 :], "<f8")
        # payload[z][y][x]: the second value steps x, the (X*Y)-th steps z
        assert payload[1] == data[1, 0, 0]
        assert payload[2 * 3] == data[0, 0, 1]
        assert svol_header(path)["order"] == "zyx"

    def test_float32_payload(self, tmp_path):
        v = Volume(np.random.default_rng(1).random((2, 2, 2)), (1, 1, 1))
        w = load_svol(save_svol(v, tmp_path / "v.svol", "float32"))
        assert np.allclose(w.data, v.data, atol=1e-7)

    def test_bad_magic(self, tmp_path):
        path = save_svol(random_volume(0), tmp_path / "v.svol")
        raw = bytearray(path.read_bytes())
        raw[0] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(ContainerError, match="bad container magic"):
            load_svol(path)

    def test_truncated(self, tmp_path):
        path = save_svol(Volume(np.zeros((2, 2, 2)), (1, 1, 1)), tmp_path / "v.svol")
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(ContainerError, match="truncated payload"):
            load_svol(path)

    def test_non_positive_spacing(self, tmp_path):
        header = {"dims": [1, 1, 1], "spacing_mm": [1, -1, 1], "dtype": "float64", "order": "zyx"}
        path = tmp_path / "v.svol"
        path.write_bytes(MAGIC + json.dumps(header).encode() + b"\n" + bytes(8))
        with pytest.raises(ContainerError, match="non-positive spacing"):
            load_svol(path)


class TestPgmCsv:
    def test_zero_slice(self, tmp_path):
        path = export_pgm(np.zeros((3, 2)), tmp_path / "z.pgm")
        assert np.array_equal(read_pgm(path), np.zeros((3, 2)))
        assert path.read_bytes().endswith(bytes(12))

    def test_endpoint_and_header(self, tmp_path):
        path = export_pgm(np.array([[1.0, 0.0], [0.5, 1.0]]), tmp_path / "a.pgm")
        raw = path.read_bytes()
        assert raw.startswith(b"P5\n2 2\n65535\n")
        assert raw[-2:] == b"\xff\xff"
        assert read_pgm(path).tolist() == [[65535, 0], [32768, 65535]]

    def test_out_of_range(self, tmp_path):
        with pytest.raises(ValueError):
            export_pgm(np.array([[1.5]]), tmp_path / "b.pgm")

    def test_csv_round_trip(self, tmp_path):
        rows = [{"a": 1, "b": 0.25}, {"a": 2, "b": float("inf")}]
        path = export_csv(rows, tmp_path / "t.csv", ("a", "b"))
        assert path.read_text().splitlines()[0] == "a,b"
        back = read_csv(path)
        assert back == [{"a": "1", "b": "0.25"}, {"a": "2", "b": "inf"}]
