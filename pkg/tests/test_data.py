import gzip
import hashlib
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chaosnet import data as D
from chaosnet import models as M
from chaosnet.training import TrainConfig, train
from conftest import needs_mnist


def _write_pair(tmp_path, n_img=5, n_lab=5, gz=False):
    g = np.random.default_rng(0)
    imgs = g.integers(0, 256, size=(n_img, 4, 3), dtype=np.uint8)
    labs = g.integers(0, 10, size=n_lab, dtype=np.uint8)
    ext = ".gz" if gz else ""
    D.write_idx(tmp_path / f"img{ext}", imgs)
    D.write_idx(tmp_path / f"lab{ext}", labs)
    return imgs, labs, tmp_path / f"img{ext}", tmp_path / f"lab{ext}"


class TestIdx:
    @pytest.mark.parametrize("gz", [False, True])
    def test_round_trip(self, tmp_path, gz):
        imgs, labs, pi, pl = _write_pair(tmp_path, gz=gz)
        ds = D.load_idx(pi, pl)
        assert np.array_equal(ds.inputs, imgs.reshape(5, -1) / 255.0)
        assert np.array_equal(ds.labels, labs)
        assert ds.inputs.min() >= 0 and ds.inputs.max() <= 1

    def test_header_layout(self, tmp_path):
        _, _, pi, _ = _write_pair(tmp_path)
        raw = pi.read_bytes()
        assert struct.unpack(">IIII", raw[:16]) == (0x803, 5, 4, 3) and len(raw) == 16 + 60

    def test_wrong_magic_at_offset_zero(self, tmp_path):
        _, _, pi, pl = _write_pair(tmp_path)
        with pytest.raises(D.IdxMagicError) as err:
            D.load_idx(pl, pi)
        assert err.value.offset == 0

    def test_truncated(self, tmp_path):
        _, _, pi, pl = _write_pair(tmp_path)
        pi.write_bytes(pi.read_bytes()[:-7])
        with pytest.raises(D.IdxTruncatedError) as err:
            D.load_idx(pi, pl)
        assert err.value.offset == 16 + 53

    def test_count_mismatch(self, tmp_path):
        _, _, pi, pl = _write_pair(tmp_path, n_img=5, n_lab=4)
        with pytest.raises(D.IdxCountMismatchError):
            D.load_idx(pi, pl)

    def test_short_buffer(self):
        with pytest.raises(D.IdxTruncatedError):
            D.parse_idx(b"\x00\x00", D.IMAGE_MAGIC)

    def test_missing_directory(self, tmp_path):
        with pytest.raises(D.DataError):
            D.load_mnist("train", data_dir=str(tmp_path))


class TestDataset:
    def test_hash_stable_and_sensitive(self):
        a = D.Dataset(np.zeros((3, 2)), np.array([0, 1, 0]), 2)
        b = D.Dataset(np.zeros((3, 2)), np.array([0, 1, 0]), 2)
        c = D.Dataset(np.zeros((3, 2)), np.array([0, 1, 1]), 2)
        assert a.content_hash == b.content_hash != c.content_hash

    def test_validation(self):
        with pytest.raises(ValueError):
            D.Dataset(np.zeros((3, 2)), np.array([0, 1]), 2)
        with pytest.raises(ValueError):
            D.Dataset(np.zeros((2, 2)), np.array([0, 2]), 2)
        with pytest.raises(ValueError):
            D.Dataset(np.array([[np.nan, 0.0]]), np.array([0]), 2)

    def test_subset(self):
        ds = D.Dataset(np.arange(20.0).reshape(10, 2), np.arange(10) % 2, 2)
        assert np.array_equal(ds.subset(3).labels, [0, 1, 0])
        s1, s2 = ds.subset(4, seed=1), ds.subset(4, seed=1)
        assert np.array_equal(s1.inputs, s2.inputs) and len(set(s1.inputs[:, 0])) == 4


@needs_mnist
def test_mnist_counts_and_range():
    tr, te = D.load_mnist("train"), D.load_mnist("test")
    assert len(tr) == 60000 and len(te) == 10000
    assert tr.inputs.shape[1] == 784 and tr.inputs.min() == 0.0 and tr.inputs.max() == 1.0
    assert set(np.unique(te.labels)) == set(range(10))
    assert te.content_hash == D.load_mnist("test").content_hash


def test_fetch_from_file_mirror(tmp_path):
    src = tmp_path / "mirror"
    src.mkdir()
    sums = {}
    for key, stem in D.MNIST_FILES.items():
        arr = np.arange(24, dtype=np.uint8).reshape(2, 3, 4) if "images" in key else np.array([1, 2], np.uint8)
        D.write_idx(tmp_path / stem, arr)
        raw = (tmp_path / stem).read_bytes()
        sums[key] = hashlib.sha256(raw).hexdigest()
        (src / (stem + ".gz")).write_bytes(gzip.compress(raw))
    dest = tmp_path / "dest"
    D.fetch_mnist(str(dest), mirrors=[src.as_uri()], checksums=sums, log=lambda *_: None)
    ds = D.load_mnist("test", data_dir=str(dest))
    assert ds.inputs.shape == (2, 12) and list(ds.labels) == [1, 2]
    bad = dict(sums, test_labels="0" * 64)
    with pytest.raises(D.DataError):
        D.fetch_mnist(str(tmp_path / "dest2"), mirrors=[src.as_uri()], checksums=bad, log=lambda *_: None)


class TestSynth:
    def test_grid_and_shapes(self):
        tr, grid = D.synth_2d("clusters", n_train=2000, n_test_grid=9000, seed=0)
        assert len(tr) == 2000 and grid.shape == (9000, 2)
        assert grid.min() == -3.0 and np.bincount(tr.labels).tolist() == [500] * 4

    def test_deterministic(self):
        a, _ = D.synth_2d("moons", seed=4)
        b, _ = D.synth_2d("moons", seed=4)
        c, _ = D.synth_2d("moons", seed=5)
        assert a.content_hash == b.content_hash != c.content_hash

    def test_clusters_linearly_separable(self):
        tr, _ = D.synth_2d("clusters", seed=0)
        te, _ = D.synth_2d("clusters", n_train=2000, seed=1)
        m = M.linear(2, 4, seed=0)
        h = train(m, tr, te, TrainConfig(epochs=10, lr=0.05))
        assert max(h.test_acc) >= 0.99

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            D.synth_2d("spirals")


class TestNoise:
    def test_huge_ratio_is_negligible(self):
        x = np.random.default_rng(0).standard_normal((100, 10))
        y = D.inject_noise(x, D.NoiseSpec("observational", 1e12), D.state_variance(x))
        assert np.max(np.abs(y - x)) < 1e-5

    def test_empirical_variance(self):
        x = np.zeros(100_000)
        y = D.inject_noise(x, D.NoiseSpec("dynamical", 4.0, seed=3), 2.0)
        assert np.var(y) == pytest.approx(0.5, rel=0.02)

    def test_deterministic_and_non_mutating(self):
        x = np.ones((4, 3))
        spec = D.NoiseSpec("observational", 2.0, seed=7)
        a, b = D.inject_noise(x, spec, 1.0, trial=1), D.inject_noise(x, spec, 1.0, trial=1)
        assert np.array_equal(a, b) and np.array_equal(x, np.ones((4, 3)))
        assert not np.array_equal(a, D.inject_noise(x, spec, 1.0, trial=2))

    def test_invalid(self):
        with pytest.raises(ValueError):
            D.inject_noise(np.ones(3), D.NoiseSpec("observational", 1.0), 0.0)
        with pytest.raises(ValueError):
            D.NoiseSpec("thermal", 1.0)
        with pytest.raises(ValueError):
            D.NoiseSpec("dynamical", -1.0)

    @settings(max_examples=25, deadline=None)
    @given(st.floats(0.1, 1e4), st.floats(0.01, 10))
    def test_noise_scale_law(self, sn, var):
        x = np.zeros(20_000)
        y = D.inject_noise(x, D.NoiseSpec("dynamical", sn), var)
        assert np.var(y) == pytest.approx(var / sn, rel=0.06)
