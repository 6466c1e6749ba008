import gzip
import struct

import numpy as np
import pytest

from chi2loss.data import (
    IMAGES_MAGIC,
    LABELS_MAGIC,
    BlobSpec,
    Dataset,
    blob_centers,
    load_idx,
    load_mnist,
    make_blobs,
    select_classes,
    subset,
    write_idx,
)
from chi2loss.errors import ConfigError, IdxFormatError, IdxTruncatedError, ValidationError

PIXELS = bytes([0, 255, 51, 102, 153, 204, 1, 2, 3,
                10, 20, 30, 40, 50, 60, 70, 80, 90])


def _write_fixture(tmp_path, labels=(7, 1), image_magic=IMAGES_MAGIC, gz=False):
    images = tmp_path / ("img.idx3" + (".gz" if gz else ""))
    label_file = tmp_path / ("lab.idx1" + (".gz" if gz else ""))
    img_bytes = struct.pack(">IIII", image_magic, 2, 3, 3) + PIXELS
    lab_bytes = struct.pack(">II", LABELS_MAGIC, len(labels)) + bytes(labels)
    for path, payload in ((images, img_bytes), (label_file, lab_bytes)):
        if gz:
            path.write_bytes(gzip.compress(payload))
        else:
            path.write_bytes(payload)
    return images, label_file


class TestLoadIdx:
    @pytest.mark.parametrize("gz", [False, True])
    def test_fixture_values(self, tmp_path, gz):
        ds = load_idx(*_write_fixture(tmp_path, gz=gz))
        assert ds.features.shape == (2, 9)
        np.testing.assert_array_equal(ds.features.ravel() * 255, np.frombuffer(PIXELS, np.uint8))
        assert ds.features[0, 1] == 1.0 and ds.features[0, 2] == 0.2
        np.testing.assert_array_equal(ds.labels, [7, 1])

    def test_labels_magic_as_images(self, tmp_path):
        images, labels = _write_fixture(tmp_path, image_magic=LABELS_MAGIC)
        with pytest.raises(IdxFormatError, match="0x00000803"):
            load_idx(images, labels)

    def test_empty_file(self, tmp_path):
        images, labels = _write_fixture(tmp_path)
        images.write_bytes(b"")
        with pytest.raises(OSError):
            load_idx(images, labels)

    def test_truncated_payload(self, tmp_path):
        images, labels = _write_fixture(tmp_path)
        images.write_bytes(images.read_bytes()[:-4])
        with pytest.raises(IdxTruncatedError):
            load_idx(images, labels)

    def test_truncated_gzip(self, tmp_path):
        images, labels = _write_fixture(tmp_path, gz=True)
        images.write_bytes(images.read_bytes()[:20])
        with pytest.raises(OSError):
            load_idx(images, labels)

    def test_count_mismatch(self, tmp_path):
        with pytest.raises(ValidationError):
            load_idx(*_write_fixture(tmp_path, labels=(1, 2, 3)))

    def test_missing_file(self, tmp_path):
        with pytest.raises(OSError):
            load_idx(tmp_path / "nope", tmp_path / "nope2")

    @pytest.mark.parametrize("suffix", ["", ".gz"])
    def test_write_round_trip(self, tmp_path, rng, suffix):
        images = rng.integers(0, 256, size=(5, 4, 6), dtype=np.uint8)
        labels = rng.integers(0, 10, size=5, dtype=np.uint8)
        ip = write_idx(tmp_path / f"i{suffix}", images)
        lp = write_idx(tmp_path / f"l{suffix}", labels)
        raw = gzip.decompress(ip.read_bytes()) if suffix else ip.read_bytes()
        assert raw[:4] == struct.pack(">I", IMAGES_MAGIC)
        ds = load_idx(ip, lp)
        np.testing.assert_array_equal(np.round(ds.features * 255).astype(np.uint8), images.reshape(5, -1))
        np.testing.assert_array_equal(ds.labels, labels)


class TestBundledMnist:
    def test_shapes_and_range(self, mnist_dir):
        train, test = load_mnist(mnist_dir)
        assert train.features.shape == (8000, 784) and test.features.shape == (2000, 784)
        assert train.features.min() == 0.0 and train.features.max() == 1.0
        assert set(np.unique(train.labels)) == set(range(10))


class TestBlobs:
    def test_tiny_spread_stays_on_center(self):
        spec = BlobSpec(4, 3, 20, 1e-9, seed=5)
        ds = make_blobs(spec)
        centers = blob_centers(spec)
        assert np.abs(ds.features - centers[ds.labels]).max() < 1e-6
        np.testing.assert_allclose(np.linalg.norm(centers, axis=1), 1.0)

    def test_deterministic(self):
        spec = BlobSpec(5, 8, 10, 0.3, seed=9)
        a, b = make_blobs(spec), make_blobs(spec)
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_nearest_center_oracle(self):
        spec = BlobSpec(10, 16, 100, 0.1, seed=3)
        ds = make_blobs(spec)
        centers = blob_centers(spec)
        dist = np.linalg.norm(ds.features[:, None, :] - centers[None], axis=2)
        assert np.mean(np.argmin(dist, axis=1) == ds.labels) > 0.99

    def test_balanced(self):
        ds = make_blobs(BlobSpec(6, 2, 13, 0.5))
        np.testing.assert_array_equal(ds.class_counts(), np.full(6, 13))

    @pytest.mark.parametrize("kw", [dict(n_classes=1), dict(cluster_spread=0.0), dict(dim=0)])
    def test_invalid(self, kw):
        args = dict(n_classes=3, dim=2, samples_per_class=5, cluster_spread=0.1)
        args.update(kw)
        with pytest.raises(ConfigError):
            BlobSpec(**args)


class TestSubset:
    @pytest.fixture
    def ds(self, rng):
        labels = np.repeat(np.arange(10), 30)
        return Dataset(rng.normal(size=(300, 3)), labels, 10)

    def test_full_count_is_permutation(self, ds):
        sub = subset(ds, 30, seed=1)
        assert sorted(map(tuple, sub.features)) == sorted(map(tuple, ds.features))

    def test_ten_per_class(self, ds):
        sub = subset(ds, 10, seed=1)
        assert len(sub) == 100
        np.testing.assert_array_equal(sub.class_counts(), np.full(10, 10))

    def test_seeds_differ_but_balanced(self, ds):
        a, b = subset(ds, 10, seed=1), subset(ds, 10, seed=2)
        assert not np.array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.class_counts(), b.class_counts())

    def test_deterministic(self, ds):
        np.testing.assert_array_equal(subset(ds, 5, 3).features, subset(ds, 5, 3).features)

    def test_insufficient(self, ds):
        with pytest.raises(ValidationError):
            subset(ds, 31, seed=0)

    def test_select_classes(self, ds):
        sub = select_classes(ds, [3, 7])
        assert sub.n_classes == 2 and len(sub) == 60
        np.testing.assert_array_equal(np.unique(sub.labels), [0, 1])


def test_dataset_validation():
    with pytest.raises(ValidationError):
        Dataset(np.zeros((3, 2)), np.array([0, 1]), 2)
    with pytest.raises(ValidationError):
        Dataset(np.zeros((2, 2)), np.array([0, 2]), 2)
    with pytest.raises(ValidationError):
        Dataset(np.array([[np.nan, 0.0]]), np.array([0]), 2)
