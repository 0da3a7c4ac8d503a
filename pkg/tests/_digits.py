"""Deterministic rendered-digit datasets for desk-scale tests.

When the real MNIST IDX files are not on disk, these generators produce a
10-class 28x28 grayscale classification task of comparable shape: digits
rasterized from bundled fonts with random placement, size, rotation, and
sensor noise. Files are written in the canonical IDX layout so tests
exercise the production loaders end to end.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib
import numpy as np
from PIL import Image, ImageDraw, ImageFont

from lntkit.dataio import Dataset, save_idx

IDX_NAMES = (
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
)

_FONT_DIR = Path(matplotlib.__file__).parent / "mpl-data" / "fonts" / "ttf"
_FONT_FILES = ("DejaVuSans.ttf", "DejaVuSans-Bold.ttf", "DejaVuSans-Oblique.ttf")
_FONT_CACHE: dict[tuple[str, int], ImageFont.FreeTypeFont] = {}


def _font(name: str, size: int) -> ImageFont.FreeTypeFont:
    key = (name, size)
    if key not in _FONT_CACHE:
        _FONT_CACHE[key] = ImageFont.truetype(str(_FONT_DIR / name), size)
    return _FONT_CACHE[key]


def render_digit(rng: np.random.Generator, label: int, side: int = 28) -> np.ndarray:
    font = _font(_FONT_FILES[int(rng.integers(len(_FONT_FILES)))],
                 int(rng.integers(16, 23)))
    img = Image.new("L", (side, side), 0)
    draw = ImageDraw.Draw(img)
    box = draw.textbbox((0, 0), str(label), font=font)
    ox = (side - (box[2] - box[0])) // 2 - box[0] + int(rng.integers(-3, 4))
    oy = (side - (box[3] - box[1])) // 2 - box[1] + int(rng.integers(-3, 4))
    draw.text((ox, oy), str(label), fill=int(rng.integers(180, 256)), font=font)
    img = img.rotate(float(rng.uniform(-20.0, 20.0)), resample=Image.BILINEAR)
    pixels = np.asarray(img, dtype=np.float64) + rng.normal(0.0, 12.0, (side, side))
    return np.clip(pixels, 0, 255).astype(np.uint8)


def digit_dataset(count: int, seed: int, side: int = 28) -> Dataset:
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 10, count).astype(np.int64)
    pixels = np.stack([render_digit(rng, int(l), side) for l in labels])
    return Dataset(
        pixels=(pixels.astype(np.float32) / 255.0)[..., None],
        labels=labels,
        class_count=10,
    )


def write_digit_idx(target_dir: Path, n_train: int, n_test: int, seed: int = 0) -> Path:
    """Write train/test rendered-digit IDX files under target_dir."""
    target_dir = Path(target_dir)
    target_dir.mkdir(parents=True, exist_ok=True)
    train = digit_dataset(n_train, seed=seed)
    test = digit_dataset(n_test, seed=seed + 1_000_003)
    save_idx(train, target_dir / IDX_NAMES[0], target_dir / IDX_NAMES[1])
    save_idx(test, target_dir / IDX_NAMES[2], target_dir / IDX_NAMES[3])
    return target_dir
