"""Dataset ingestion: CIFAR-10 binary records, PNG/PPM images, and a
synthetic desk-scale stand-in generator in the same binary format."""

import os

import numpy as np
from PIL import Image

RECORD_LEN = 3073  # 1 label byte + 3 x 1024 pixel plane bytes
N_CLASSES = 10


class DatasetError(ValueError):
    pass


class BadLabel(DatasetError):
    pass


def load_cifar10(path):
    """Load CIFAR-10 binary batches -> (images uint8 (N,32,32,3), labels).

    `path` may be one .bin file or a directory of them (sorted order).
    """
    if os.path.isdir(path):
        files = sorted(f for f in os.listdir(path) if f.endswith(".bin"))
        if not files:
            raise DatasetError(f"no .bin batch files in {path}")
        parts = [load_cifar10(os.path.join(path, f)) for f in files]
        return (np.concatenate([p[0] for p in parts]),
                np.concatenate([p[1] for p in parts]))
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0 or raw.size % RECORD_LEN:
        raise DatasetError(f"{path}: size {raw.size} is not a multiple of {RECORD_LEN}")
    records = raw.reshape(-1, RECORD_LEN)
    labels = records[:, 0].astype(np.int64)
    if labels.max(initial=0) >= N_CLASSES:
        raise BadLabel(f"{path}: label byte {labels.max()} out of range")
    planes = records[:, 1:].reshape(-1, 3, 32, 32)
    images = np.transpose(planes, (0, 2, 3, 1)).copy()
    return images, labels


def save_cifar10(path, images, labels):
    """Write images/labels in the CIFAR-10 binary record format."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.int64)
    if images.shape[1:] != (32, 32, 3):
        raise DatasetError("records must be 32x32x3")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= N_CLASSES:
        raise BadLabel("labels must be in [0, 9]")
    planes = np.transpose(images, (0, 3, 1, 2)).reshape(len(images), -1)
    records = np.concatenate([labels[:, None].astype(np.uint8), planes], axis=1)
    records.tofile(path)


def load_image(path):
    """PNG/PPM file -> uint8 RGB array (H, W, 3)."""
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def save_image(path, array):
    arr = np.clip(np.asarray(array), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def save_pgm(path, grid):
    """Grayscale P5 image of a nonnegative float grid, max-normalized."""
    grid = np.asarray(grid, dtype=np.float64)
    top = grid.max()
    img = np.zeros_like(grid, dtype=np.uint8) if top <= 0 else \
        np.round(grid / top * 255.0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        f.write(img.tobytes())


# ---------------------------------------------------------------------------
# synthetic desk-scale data

_PALETTE = np.array([
    [200, 60, 60], [60, 200, 60], [60, 60, 200], [200, 200, 60], [200, 60, 200],
    [60, 200, 200], [230, 140, 40], [140, 40, 230], [40, 230, 140], [160, 160, 160],
], dtype=np.float64)


def synthetic_cifar(n, seed=0):
    """Ten procedurally distinct classes in CIFAR-10 geometry.

    Class k selects a stripe orientation, spatial frequency, and color
    pair, so the label survives moderate reconstruction distortion while
    the images stay smooth enough to compress.
    """
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    labels = rng.integers(0, N_CLASSES, n)
    uu, vv = np.meshgrid(np.linspace(0, 1, 32), np.linspace(0, 1, 32), indexing="ij")
    images = np.empty((n, 32, 32, 3), dtype=np.uint8)
    for i, k in enumerate(labels):
        theta = np.pi * k / N_CLASSES
        freq = 3.0 + (k % 3)
        phase = rng.uniform(0, 2 * np.pi)
        wave = 0.5 + 0.5 * np.sin(2 * np.pi * freq * (uu * np.cos(theta) + vv * np.sin(theta)) + phase)
        c1 = _PALETTE[k]
        c2 = _PALETTE[(k + 3) % N_CLASSES] * 0.35
        img = wave[..., None] * c1 + (1 - wave[..., None]) * c2
        img *= rng.uniform(0.75, 1.1)
        img += rng.normal(0, 6.0, img.shape)
        images[i] = np.clip(img, 0, 255).astype(np.uint8)
    return images, labels


def ensure_dataset(path, n, seed=0):
    """Load CIFAR-10 binary data at `path` if it exists, else synthesize
    a deterministic stand-in file there (same binary format)."""
    if path and os.path.exists(path):
        images, labels = load_cifar10(path)
        return images[:n], labels[:n]
    images, labels = synthetic_cifar(n, seed=seed)
    if path:
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        save_cifar10(path, images, labels)
    return images, labels
