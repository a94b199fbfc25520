"""Datasets: synthetic Gaussian-blob classification, the big-endian IDX
image/label container, and a plain PCA projection.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Dataset",
    "IdxFormatError",
    "synthetic_classification",
    "load_idx",
    "save_idx",
    "pca_project",
]

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """Malformed IDX payload: bad magic, truncation, or count mismatch."""


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        object.__setattr__(self, "features", np.asarray(self.features, dtype=float))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=int))
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise ValueError("features must be a nonempty (n, d) matrix")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("labels must have one entry per example")
        if self.num_classes < 1:
            raise ValueError(f"num_classes must be >= 1, got {self.num_classes}")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise ValueError("labels must lie in [0, num_classes)")

    def __len__(self) -> int:
        return self.features.shape[0]

    def subset(self, indices) -> tuple[np.ndarray, np.ndarray]:
        idx = np.asarray(indices, dtype=int)
        return self.features[idx], self.labels[idx]


def synthetic_classification(
    n: int, dim: int, classes: int, separation: float, rng: np.random.Generator
) -> Dataset:
    """Gaussian blobs, one unit-variance cluster per class.

    Class means sit at `separation` times unit directions drawn once per
    class; separation 0 makes every class-conditional distribution identical.
    """
    if min(n, dim, classes) < 1:
        raise ValueError("n, dim, and classes must all be >= 1")
    directions = rng.normal(size=(classes, dim))
    norms = np.linalg.norm(directions, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    means = separation * directions / norms
    labels = rng.integers(0, classes, size=n)
    features = means[labels] + rng.normal(size=(n, dim))
    return Dataset(features=features, labels=labels, num_classes=classes)


def _read_exact(handle, count: int, path, what: str) -> bytes:
    data = handle.read(count)
    if len(data) != count:
        raise IdxFormatError(f"{path}: truncated {what} (wanted {count} bytes, got {len(data)})")
    return data


def load_idx(images_path, labels_path) -> Dataset:
    """Read an IDX image/label pair; pixels scaled to [0, 1], images flattened.

    Raises:
        IdxFormatError: wrong magic number, truncated payload, or an
            image/label count mismatch.
    """
    with open(images_path, "rb") as handle:
        magic, count, rows, cols = struct.unpack(">iiii", _read_exact(handle, 16, images_path, "header"))
        if magic != IDX_IMAGE_MAGIC:
            raise IdxFormatError(f"{images_path}: bad image magic 0x{magic:08x}")
        payload = _read_exact(handle, count * rows * cols, images_path, "pixel data")
        pixels = np.frombuffer(payload, dtype=np.uint8).reshape(count, rows * cols)
    with open(labels_path, "rb") as handle:
        magic, label_count = struct.unpack(">ii", _read_exact(handle, 8, labels_path, "header"))
        if magic != IDX_LABEL_MAGIC:
            raise IdxFormatError(f"{labels_path}: bad label magic 0x{magic:08x}")
        labels = np.frombuffer(_read_exact(handle, label_count, labels_path, "label data"), dtype=np.uint8)
    if label_count != count:
        raise IdxFormatError(f"image count {count} does not match label count {label_count}")
    return Dataset(
        features=pixels.astype(float) / 255.0,
        labels=labels.astype(int),
        num_classes=int(labels.max()) + 1 if labels.size else 1,
    )


def save_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    """Write (n, rows, cols) uint8 images and n uint8 labels as an IDX pair."""
    images = np.ascontiguousarray(images, dtype=np.uint8)
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    if images.ndim != 3:
        raise ValueError("images must have shape (n, rows, cols)")
    if labels.shape != (images.shape[0],):
        raise ValueError("labels must have one entry per image")
    n, rows, cols = images.shape
    with open(images_path, "wb") as handle:
        handle.write(struct.pack(">iiii", IDX_IMAGE_MAGIC, n, rows, cols))
        handle.write(images.tobytes())
    with open(labels_path, "wb") as handle:
        handle.write(struct.pack(">ii", IDX_LABEL_MAGIC, n))
        handle.write(labels.tobytes())


def pca_project(features, components: int) -> tuple[np.ndarray, np.ndarray]:
    """Project mean-centered data onto its top principal directions.

    Returns (projection, projected) where projection is (d, components) with
    orthonormal columns and projected = centered @ projection. Directions
    beyond the data rank are the arbitrary-but-deterministic orthonormal
    complement produced by the SVD. Column signs are fixed so the largest-
    magnitude entry of each direction is positive.
    """
    matrix = np.asarray(features, dtype=float)
    if matrix.ndim != 2:
        raise ValueError("features must be an (n, d) matrix")
    n, d = matrix.shape
    if not 1 <= components <= d:
        raise ValueError(f"components must lie in [1, {d}], got {components}")
    centered = matrix - matrix.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=True)
    directions = vt[:components]
    anchor = np.abs(directions).argmax(axis=1)
    signs = np.sign(directions[np.arange(components), anchor])
    signs[signs == 0] = 1.0
    projection = (directions * signs[:, None]).T
    return projection, centered @ projection
