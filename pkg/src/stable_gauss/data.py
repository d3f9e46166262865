"""Image datasets: IDX (MNIST) ingestion, splits, overfit subsets, synthetic sets.

Pixels are stored as float64 in [0, 1] (byte value / 255).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .rng import make_generator

IDX_IMAGE_MAGIC = 0x00000803
DEQUANT_WIDTH = 1.0 / 256.0
MNIST_TRAIN_SIZE = 50000
MNIST_TOTAL = 60000


@dataclass(frozen=True, eq=False)
class ImageDataset:
    images: np.ndarray  # [n, height * width]
    height: int
    width: int
    source: str = "unknown"
    dequantized: bool = False

    def __post_init__(self):
        images = np.asarray(self.images, dtype=np.float64)
        if images.ndim != 2 or images.shape[1] != self.height * self.width:
            raise ValueError(
                f"images of shape {images.shape} do not match {self.height}x{self.width}"
            )
        upper = 1.0 + DEQUANT_WIDTH if self.dequantized else 1.0
        if images.size and (images.min() < 0.0 or images.max() > upper):
            raise ValueError(f"pixel values must lie in [0, {upper:g}]")
        object.__setattr__(self, "images", images)

    @property
    def n(self) -> int:
        return self.images.shape[0]

    @property
    def d(self) -> int:
        return self.images.shape[1]

    def __len__(self) -> int:
        return self.n

    def subset(self, index, source: str | None = None) -> "ImageDataset":
        return ImageDataset(
            self.images[index], self.height, self.width, source or self.source, self.dequantized
        )


def parse_idx(data: bytes, source: str = "idx") -> ImageDataset:
    """Parse an IDX3 unsigned-byte image file (big-endian header)."""
    if len(data) < 16:
        raise ValueError(f"IDX header truncated: need 16 bytes, missing {16 - len(data)}")
    magic, n, rows, cols = struct.unpack(">4i", data[:16])
    if magic != IDX_IMAGE_MAGIC:
        raise ValueError(f"bad IDX magic 0x{magic:08x}, expected 0x{IDX_IMAGE_MAGIC:08x}")
    need = n * rows * cols
    have = len(data) - 16
    if have < need:
        raise ValueError(f"IDX payload truncated: expected {need} bytes, missing {need - have}")
    pixels = np.frombuffer(data, dtype=np.uint8, count=need, offset=16)
    return ImageDataset(pixels.reshape(n, rows * cols) / 255.0, rows, cols, source)


def load_idx(path: str | Path) -> ImageDataset:
    path = Path(path)
    return parse_idx(path.read_bytes(), source=str(path))


def to_idx(ds: ImageDataset) -> bytes:
    if ds.dequantized:
        raise ValueError("dequantized data cannot be written as IDX bytes")
    pixels = np.rint(ds.images * 255.0).astype(np.uint8)
    return struct.pack(">4i", IDX_IMAGE_MAGIC, ds.n, ds.height, ds.width) + pixels.tobytes()


def split(ds: ImageDataset) -> tuple[ImageDataset, ImageDataset]:
    """Order-preserving MNIST split into 50000 training and 10000 validation images."""
    if ds.n != MNIST_TOTAL:
        raise ValueError(f"split expects {MNIST_TOTAL} images, got {ds.n}")
    return (
        ds.subset(slice(0, MNIST_TRAIN_SIZE), ds.source + "[train]"),
        ds.subset(slice(MNIST_TRAIN_SIZE, None), ds.source + "[val]"),
    )


def overfit_subset(ds: ImageDataset, k: int, seed: int) -> ImageDataset:
    if not 0 < k <= ds.n:
        raise ValueError(f"cannot draw {k} images from a dataset of {ds.n}")
    index = make_generator(seed).choice(ds.n, size=k, replace=False)
    return ds.subset(index, f"{ds.source}[overfit k={k} seed={seed}]")


def dequantize(ds: ImageDataset, seed: int) -> ImageDataset:
    """Add independent U[0, 1/256) noise to every pixel."""
    scaled = ds.images * 255.0
    if ds.dequantized or np.abs(scaled - np.rint(scaled)).max(initial=0.0) > 1e-9 * 255.0:
        raise ValueError("dequantize expects pixel values that are multiples of 1/255")
    noise = make_generator(seed).random(ds.images.shape) * DEQUANT_WIDTH
    return ImageDataset(ds.images + noise, ds.height, ds.width, ds.source + "[dequantized]", True)


class SynthKind(str, Enum):
    CONSTANT_CORNERS = "constant-corners"
    RANDOM_PATCHES = "random-patches"


def synth_set(kind: SynthKind, n: int, h: int, w: int, seed: int) -> ImageDataset:
    """Seeded quantized textures; ``constant-corners`` pins the four corner pixels to 0."""
    kind = SynthKind(kind)
    gen = make_generator(seed)
    images = gen.integers(0, 256, size=(n, h, w)).astype(np.float64) / 255.0
    if kind is SynthKind.CONSTANT_CORNERS:
        images[:, 0, 0] = images[:, 0, -1] = images[:, -1, 0] = images[:, -1, -1] = 0.0
    return ImageDataset(images.reshape(n, h * w), h, w, f"synth:{kind.value}")
