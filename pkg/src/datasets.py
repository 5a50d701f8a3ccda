"""
Task Datasets

Synthetic block-pattern tasks for desk-scale runs and an IDX reader
for small external image datasets.
"""

import gzip
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image

from .errors import DatasetError

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class TaskData:
    """
    Labeled inputs of one task.

    Attributes:
        task_id: Task name
        inputs: Array (N, C, H, W)
        labels: Integer labels (N,)
        n_classes: Number of classes
        class_groups: For derived tasks, the parent classes merged into each class
    """

    task_id: str
    inputs: np.ndarray
    labels: np.ndarray
    n_classes: int
    class_groups: Optional[List[List[int]]] = None

    def __len__(self) -> int:
        return int(self.inputs.shape[0])


def _pattern_centroids(rng: np.random.Generator, shape: Tuple[int, int, int],
                       n_classes: int) -> np.ndarray:
    """One positive square block per class on a zero background, on distinct tiles while tiles last."""
    channels, height, width = shape
    side = max(1, min(height, width) // 3)
    tiles = [(r, c) for r in range(0, height - side + 1, side) for c in range(0, width - side + 1, side)]
    picks = rng.choice(len(tiles), size=n_classes, replace=n_classes > len(tiles))
    centroids = np.zeros((n_classes,) + shape)
    for k, tile in enumerate(picks):
        r, c = tiles[tile]
        centroids[k, :, r:r + side, c:c + side] = rng.uniform(0.5, 1.5, (channels, side, side))
    return centroids


def make_parent_task(input_shape: Sequence[int], n_classes: int = 4, samples_per_class: int = 250,
                     noise: float = 0.5, seed: int = 0,
                     task_id: str = "parent") -> Tuple[TaskData, np.ndarray]:
    """
    Block patterns on a zero background.

    Every class is a block of positive amplitudes at its own position;
    samples add noise * N(0, 1) on the block only, so background pixels
    stay exactly zero.

    Returns:
        (task data, centroids shaped (n_classes,) + input_shape)
    """
    shape = tuple(input_shape)
    if len(shape) != 3:
        raise DatasetError(f"synthetic tasks need a (C, H, W) input shape, got {shape}")
    rng = np.random.default_rng(seed)
    centroids = _pattern_centroids(rng, shape, n_classes)
    labels = np.repeat(np.arange(n_classes), samples_per_class)
    rng.shuffle(labels)
    support = centroids[labels] != 0
    inputs = (centroids[labels] + noise * rng.standard_normal((labels.size,) + shape)) * support
    logger.debug(f"Built parent task: {labels.size} samples, {n_classes} classes")
    return TaskData(task_id, inputs, labels, n_classes), centroids


def make_child_task(centroids: np.ndarray, class_groups: Sequence[Sequence[int]], n_samples: int = 2000,
                    shift: float = 0.3, noise: float = 0.5, seed: int = 1,
                    task_id: str = "child") -> TaskData:
    """
    Relabeled task over shifted parent patterns.

    Child class k draws uniformly from the parent classes in class_groups[k];
    the block amplitudes of every parent pattern move by shift * N(0, 1)
    while the background stays zero.
    """
    groups = [list(g) for g in class_groups]
    if not groups or any(not g for g in groups):
        raise DatasetError("class groups must be non-empty")
    rng = np.random.default_rng(seed)
    support = centroids != 0
    shifted = (centroids + shift * rng.standard_normal(centroids.shape)) * support
    labels = rng.integers(0, len(groups), size=n_samples)
    members = np.array([groups[k][rng.integers(0, len(groups[k]))] for k in labels])
    noisy = shifted[members] + noise * rng.standard_normal((n_samples,) + centroids.shape[1:])
    inputs = noisy * support[members]
    logger.debug(f"Built child task '{task_id}': {n_samples} samples, groups {groups}")
    return TaskData(task_id, inputs, labels, len(groups), groups)


def read_idx(path: Union[str, Path]) -> np.ndarray:
    """
    Read an IDX image (0x803) or label (0x801) file, optionally gzip-compressed.

    Returns:
        uint8 array (N, rows, cols) for images, (N,) for labels
    """
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    try:
        with opener(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise DatasetError(f"cannot read IDX file {path}: {e}") from e
    if len(data) < 8:
        raise DatasetError(f"{path}: file too short for an IDX header")
    (magic,) = struct.unpack(">I", data[:4])
    if magic == IDX_IMAGES_MAGIC:
        if len(data) < 16:
            raise DatasetError(f"{path}: truncated image header")
        n, rows, cols = struct.unpack(">III", data[4:16])
        shape, offset = (n, rows, cols), 16
    elif magic == IDX_LABELS_MAGIC:
        (n,) = struct.unpack(">I", data[4:8])
        shape, offset = (n,), 8
    else:
        raise DatasetError(f"{path}: unknown IDX magic 0x{magic:08x}")
    expected = int(np.prod(shape))
    if len(data) - offset != expected:
        raise DatasetError(f"{path}: header promises {expected} bytes, found {len(data) - offset}")
    return np.frombuffer(data, dtype=np.uint8, offset=offset).reshape(shape)


def resize_images(images: np.ndarray, input_shape: Sequence[int]) -> np.ndarray:
    """
    Resize (N, rows, cols) uint8 images to the network geometry (C, H, W).

    Pixels are scaled to [0, 1] and replicated across channels.
    """
    channels, height, width = input_shape
    out = np.empty((images.shape[0], channels, height, width))
    for i, img in enumerate(images):
        if img.shape != (height, width):
            img = np.asarray(Image.fromarray(img).resize((width, height), Image.Resampling.BILINEAR))
        out[i] = img.astype(np.float64) / 255.0
    return out


def load_idx_task(images_path: Union[str, Path], labels_path: Union[str, Path],
                  input_shape: Sequence[int], task_id: str, limit: int = None) -> TaskData:
    """
    Build a TaskData from an IDX image/label pair.

    Args:
        images_path: IDX image file
        labels_path: IDX label file
        input_shape: Network input geometry (C, H, W)
        task_id: Task name
        limit: Keep only the first `limit` samples

    Returns:
        TaskData resized to input_shape
    """
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim != 3 or labels.ndim != 1:
        raise DatasetError(f"task '{task_id}': expected an image file and a label file")
    if images.shape[0] != labels.shape[0]:
        raise DatasetError(f"task '{task_id}': {images.shape[0]} images but {labels.shape[0]} labels")
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    if labels.size == 0:
        raise DatasetError(f"task '{task_id}': no samples")
    inputs = resize_images(images, input_shape)
    logger.info(f"Loaded IDX task '{task_id}': {labels.size} samples resized to {tuple(input_shape)}")
    return TaskData(task_id, inputs, labels.astype(np.int64), int(labels.max()) + 1)
