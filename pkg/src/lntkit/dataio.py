"""Loading and color conversion for MNIST-style IDX and CIFAR-10 binary data.

Loaders read the canonical on-disk formats, validate eagerly, and return an
immutable :class:`Dataset` of images normalized to [0, 1].
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import ConsistencyError, FormatError, InvalidInputError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD_BYTES = 3073  # 1 label byte + 3 * 32 * 32 pixel bytes

# BT.601 luma with zero-centered chroma, coefficients rounded to 3 decimals
# so that gray inputs map to exactly zero chroma.
YUV_FROM_RGB = np.array(
    [
        [0.299, 0.587, 0.114],
        [-0.147, -0.289, 0.436],
        [0.615, -0.515, -0.100],
    ],
    dtype=np.float64,
)


@dataclass(frozen=True)
class LabeledImage:
    """One image (H, W, C) with values in [0, 1] and its class index."""

    pixels: np.ndarray
    label: int


@dataclass(frozen=True)
class Dataset:
    """An immutable stack of same-shape labeled images.

    pixels has shape (L, H, W, C) float32 in [0, 1]; labels has shape (L,).
    """

    pixels: np.ndarray
    labels: np.ndarray
    class_count: int
    split_tag: str = "train"

    def __post_init__(self):
        if self.pixels.ndim != 4:
            raise ConsistencyError(f"pixels must be 4-D, got shape {self.pixels.shape}")
        if len(self.pixels) != len(self.labels):
            raise ConsistencyError(
                f"{len(self.pixels)} images but {len(self.labels)} labels"
            )
        if len(self.labels) and self.labels.max() >= self.class_count:
            raise ConsistencyError(
                f"label {int(self.labels.max())} outside [0, {self.class_count})"
            )
        self.pixels.setflags(write=False)
        self.labels.setflags(write=False)

    def __len__(self) -> int:
        return len(self.pixels)

    def __getitem__(self, i: int) -> LabeledImage:
        return LabeledImage(self.pixels[i], int(self.labels[i]))

    @property
    def images(self) -> Iterator[LabeledImage]:
        return (self[i] for i in range(len(self)))

    @property
    def channels(self) -> int:
        return self.pixels.shape[3]

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return self.pixels.shape[1:]

    def subset(self, indices: np.ndarray, split_tag: str | None = None) -> "Dataset":
        indices = np.asarray(indices)
        return Dataset(
            pixels=self.pixels[indices].copy(),
            labels=self.labels[indices].copy(),
            class_count=self.class_count,
            split_tag=self.split_tag if split_tag is None else split_tag,
        )


def _read_exact(f, n: int, path: Path) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise FormatError(f"{path}: truncated file, wanted {n} more bytes")
    return data


def load_idx(images_path, labels_path, split_tag: str = "train") -> Dataset:
    """Load an IDX image/label file pair (the MNIST distribution format).

    Pixel bytes are divided by 255. The image magic must be 0x00000803 and
    the label magic 0x00000801; counts in the two headers must agree.
    """
    images_path, labels_path = Path(images_path), Path(labels_path)

    with open(images_path, "rb") as f:
        magic, count, rows, cols = struct.unpack(">IIII", _read_exact(f, 16, images_path))
        if magic != IDX_IMAGES_MAGIC:
            raise FormatError(
                f"{images_path}: bad image magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}"
            )
        raw = _read_exact(f, count * rows * cols, images_path)
        if f.read(1):
            raise FormatError(f"{images_path}: trailing bytes after {count} images")
    images = np.frombuffer(raw, dtype=np.uint8).reshape(count, rows, cols)

    with open(labels_path, "rb") as f:
        magic, label_count = struct.unpack(">II", _read_exact(f, 8, labels_path))
        if magic != IDX_LABELS_MAGIC:
            raise FormatError(
                f"{labels_path}: bad label magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}"
            )
        labels = np.frombuffer(_read_exact(f, label_count, labels_path), dtype=np.uint8)

    if count != label_count:
        raise ConsistencyError(f"{count} images but {label_count} labels")

    pixels = (images.astype(np.float32) / 255.0)[..., None]
    labels = labels.astype(np.int64)
    class_count = int(labels.max()) + 1 if len(labels) else 0
    return Dataset(pixels=pixels, labels=labels, class_count=class_count, split_tag=split_tag)


def save_idx(dataset: Dataset, images_path, labels_path) -> None:
    """Write a grayscale Dataset back to the IDX pair format.

    Pixels are rescaled to bytes, so loading the written files recovers the
    original pixel bytes exactly for data that originated from IDX files.
    """
    if dataset.channels != 1:
        raise InvalidInputError("IDX export supports single-channel images only")
    count, rows, cols, _ = dataset.pixels.shape
    data = np.rint(dataset.pixels[..., 0] * 255.0).astype(np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, count, rows, cols))
        f.write(data.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, count))
        f.write(dataset.labels.astype(np.uint8).tobytes())


def load_cifar10(batch_paths: Sequence, split_tag: str = "train") -> Dataset:
    """Load CIFAR-10 binary batches (3073-byte records, label byte first).

    Images come out as 32x32x3 in RGB channel order, values in [0, 1].
    """
    all_pixels = []
    all_labels = []
    for path in batch_paths:
        path = Path(path)
        raw = path.read_bytes()
        if len(raw) % CIFAR_RECORD_BYTES != 0:
            raise FormatError(
                f"{path}: size {len(raw)} is not a multiple of {CIFAR_RECORD_BYTES}"
            )
        records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
        labels = records[:, 0]
        if len(labels) and labels.max() >= 10:
            raise ConsistencyError(f"{path}: label byte {int(labels.max())} >= 10")
        pixels = records[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
        all_pixels.append(pixels)
        all_labels.append(labels)

    if not all_pixels:
        pixels = np.zeros((0, 32, 32, 3), dtype=np.float32)
        labels = np.zeros((0,), dtype=np.int64)
        return Dataset(pixels=pixels, labels=labels, class_count=0, split_tag=split_tag)

    pixels = np.concatenate(all_pixels).astype(np.float32) / 255.0
    labels = np.concatenate(all_labels).astype(np.int64)
    return Dataset(pixels=pixels, labels=labels, class_count=10, split_tag=split_tag)


def rgb_to_yuv(dataset: Dataset) -> Dataset:
    """Convert a 3-channel RGB dataset to YUV with zero-centered chroma."""
    if dataset.channels != 3:
        raise InvalidInputError(f"need 3 channels for YUV conversion, got {dataset.channels}")
    yuv = np.tensordot(dataset.pixels.astype(np.float64), YUV_FROM_RGB.T, axes=([3], [0]))
    return Dataset(
        pixels=yuv.astype(np.float32),
        labels=dataset.labels.copy(),
        class_count=dataset.class_count,
        split_tag=dataset.split_tag,
    )
