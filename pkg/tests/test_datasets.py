"""Tests for synthetic tasks and the IDX reader."""

import gzip
import struct

import numpy as np
import pytest

from src.datasets import load_idx_task, make_child_task, make_parent_task, read_idx, resize_images
from src.errors import DatasetError
from src.fixtures import desk_cnn
from src.nn_core import init_network
from src.threshold_mask import ThresholdSet, measure_sparsity


def _idx_images(images: np.ndarray) -> bytes:
    n, rows, cols = images.shape
    return struct.pack(">IIII", 0x00000803, n, rows, cols) + images.astype(np.uint8).tobytes()


def _idx_labels(labels: np.ndarray) -> bytes:
    return struct.pack(">II", 0x00000801, labels.size) + labels.astype(np.uint8).tobytes()


@pytest.fixture
def idx_pair(tmp_path, rng):
    images = rng.integers(0, 256, size=(6, 4, 4), dtype=np.uint8)
    labels = np.array([0, 1, 2, 1, 0, 2], dtype=np.uint8)
    images_path = tmp_path / "images-idx3-ubyte"
    labels_path = tmp_path / "labels-idx1-ubyte.gz"
    images_path.write_bytes(_idx_images(images))
    with gzip.open(labels_path, "wb") as f:
        f.write(_idx_labels(labels))
    return images_path, labels_path, images, labels


def test_parent_task_is_seeded():
    data, centroids = make_parent_task((1, 4, 4), n_classes=3, samples_per_class=10, seed=4)
    again, _ = make_parent_task((1, 4, 4), n_classes=3, samples_per_class=10, seed=4)
    assert data.inputs.shape == (30, 1, 4, 4)
    assert centroids.shape == (3, 1, 4, 4)
    assert len(data) == 30
    assert np.bincount(data.labels).tolist() == [10, 10, 10]
    np.testing.assert_array_equal(data.inputs, again.inputs)


def test_child_task_merges_parent_classes():
    _, centroids = make_parent_task((1, 4, 4), n_classes=4, samples_per_class=5)
    child = make_child_task(centroids, [[0, 1], [2, 3]], n_samples=50, task_id="pairs")
    assert child.n_classes == 2
    assert child.class_groups == [[0, 1], [2, 3]]
    assert child.inputs.shape == (50, 1, 4, 4)
    assert set(child.labels.tolist()) <= {0, 1}
    with pytest.raises(DatasetError):
        make_child_task(centroids, [[0], []])


def test_synthetic_background_is_exactly_zero():
    data, centroids = make_parent_task((2, 8, 8), n_classes=4, samples_per_class=20, seed=2)
    support = centroids != 0
    assert not np.any(data.inputs[~support[data.labels]])
    # 2x2 blocks on distinct tiles
    assert (support.sum(axis=(1, 2, 3)) == 8).all()
    assert not np.any(support.sum(axis=0) > 1)

    child = make_child_task(centroids, [[0], [1], [2, 3]], n_samples=40, seed=3)
    assert not np.any(child.inputs * ~support.any(axis=0))


def test_synthetic_patterns_leave_desk_layers_sparse():
    data, _ = make_parent_task((1, 8, 8), n_classes=4, samples_per_class=10, seed=0)
    spec = desk_cnn(classes=4, input_shape=(1, 8, 8))
    weights = init_network(spec, seed=0)
    for thresholds in (None, ThresholdSet.constant(spec, "child", 1e-2)):
        profile = measure_sparsity(spec, weights, thresholds, data.inputs)
        assert profile.values[0] >= 48 / 64
        assert profile.values[1] >= 7 / 16


def test_read_plain_and_gzip_idx(idx_pair):
    images_path, labels_path, images, labels = idx_pair
    np.testing.assert_array_equal(read_idx(images_path), images)
    np.testing.assert_array_equal(read_idx(labels_path), labels)


def test_bad_idx_files(tmp_path):
    magic = tmp_path / "magic"
    magic.write_bytes(struct.pack(">II", 0x00000999, 0))
    with pytest.raises(DatasetError, match="magic"):
        read_idx(magic)

    truncated = tmp_path / "truncated"
    truncated.write_bytes(struct.pack(">IIII", 0x00000803, 2, 3, 3) + b"\x00" * 10)
    with pytest.raises(DatasetError, match="promises 18"):
        read_idx(truncated)

    short = tmp_path / "short"
    short.write_bytes(b"\x00\x00")
    with pytest.raises(DatasetError, match="too short"):
        read_idx(short)

    with pytest.raises(DatasetError, match="cannot read"):
        read_idx(tmp_path / "absent")


def test_resize_scales_and_replicates():
    images = np.full((2, 4, 4), 255, dtype=np.uint8)
    out = resize_images(images, (3, 8, 8))
    assert out.shape == (2, 3, 8, 8)
    np.testing.assert_allclose(out, 1.0)
    same = resize_images(np.zeros((1, 5, 5), dtype=np.uint8), (1, 5, 5))
    assert same.shape == (1, 1, 5, 5)


def test_load_idx_task(idx_pair):
    images_path, labels_path, _, labels = idx_pair
    task = load_idx_task(images_path, labels_path, (1, 4, 4), "digits", limit=4)
    assert len(task) == 4
    assert task.n_classes == int(labels[:4].max()) + 1
    assert task.inputs.max() <= 1.0
    with pytest.raises(DatasetError, match="image file and a label file"):
        load_idx_task(labels_path, images_path, (1, 4, 4), "swapped")
