"""Deterministic synthetic image sets.

The bundled set is regenerated from a fixed seed, so every checkout sees
the same images without downloading anything.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

BUNDLED_SEED = 20240521


@dataclass(frozen=True)
class Dataset:
    train_x: np.ndarray  # (n, c, h, w)
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray

    @property
    def n_classes(self) -> int:
        return int(max(self.train_y.max(), self.test_y.max())) + 1

    @property
    def image_shape(self) -> tuple:
        return self.train_x.shape[1:]


def _templates(rng, n_classes, size, channels):
    # Smooth random patterns: low-frequency cosine mixtures, one per class.
    yy, xx = np.mgrid[0:size, 0:size] / size
    out = np.empty((n_classes, channels, size, size))
    for c in range(n_classes):
        for ch in range(channels):
            img = np.zeros((size, size))
            for _ in range(3):
                fy, fx = rng.integers(0, 3, size=2)
                phase = rng.uniform(0, 2 * np.pi)
                img += rng.normal() * np.cos(2 * np.pi * (fy * yy + fx * xx) + phase)
            img += 0.5 * rng.normal(size=(size, size))
            out[c, ch] = img / np.linalg.norm(img)
    return out * size


def synthetic_patterns(
    n_classes: int = 10,
    size: int = 8,
    n_train: int = 40,
    n_test: int = 20,
    noise: float = 0.1,
    channels: int = 1,
    seed: int = BUNDLED_SEED,
) -> Dataset:
    """Class templates plus per-sample gain and pixel noise.

    ``n_train``/``n_test`` are per class.  With the default small noise the
    classes are linearly separable.
    """
    if not (1 <= n_classes <= 10 and size <= 16):
        raise ValueError("synthetic sets are limited to 10 classes and 16x16 images")
    rng = np.random.default_rng(seed)
    tmpl = _templates(rng, n_classes, size, channels)

    def draw(per_class):
        y = np.repeat(np.arange(n_classes), per_class)
        gain = rng.uniform(0.8, 1.2, size=y.size)[:, None, None, None]
        x = tmpl[y] * gain + noise * rng.normal(size=(y.size, channels, size, size))
        order = rng.permutation(y.size)
        return x[order], y[order]

    tx, ty = draw(n_train)
    vx, vy = draw(n_test)
    return Dataset(tx, ty, vx, vy)


BUNDLED = {
    # separable, 10 classes at 8x8: the toy6 reference set
    "patterns10": dict(),
    # separable, 2 classes at 4x4
    "patterns2": dict(n_classes=2, size=4, n_train=50, n_test=50),
    # heavy noise and few training images, for the train/test gap probe
    "noisy10": dict(n_train=10, n_test=50, noise=1.0, seed=7),
}


def bundled(name: str = "patterns10") -> Dataset:
    return synthetic_patterns(**BUNDLED[name])


def load_cifar10_batch(path) -> tuple[np.ndarray, np.ndarray]:
    """Read one file of the CIFAR-10 binary distribution (label byte followed
    by 3072 pixel bytes per record).  Pixels are scaled to [0, 1]."""
    raw = np.frombuffer(Path(path).read_bytes(), dtype=np.uint8)
    if raw.size % 3073:
        raise ValueError(f"{path}: size {raw.size} is not a multiple of 3073")
    rec = raw.reshape(-1, 3073)
    return rec[:, 1:].reshape(-1, 3, 32, 32).astype(np.float64) / 255.0, rec[:, 0].astype(np.intp)
