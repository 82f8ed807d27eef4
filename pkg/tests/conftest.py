import gzip
import os
import struct
import numpy as np
import pytest

from lpnuq.tomography.geometry import ScanGeometry
from lpnuq.utils.data import IDX_IMAGE_MAGIC, IDX_LABEL_MAGIC, LabeledDataset

requires_mnist = pytest.mark.skipif(
    not os.getenv("LPNUQ_DATA_DIR"), reason="LPNUQ_DATA_DIR not set"
)
requires_checkpoint = pytest.mark.skipif(
    not os.getenv("LPNUQ_CHECKPOINT"), reason="LPNUQ_CHECKPOINT not set"
)


def idxImages(pixels):
    """IDX image file bytes for a uint8 array of shape (count, 28, 28)."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    count, rows, cols = pixels.shape
    return struct.pack(">IIII", IDX_IMAGE_MAGIC, count, rows, cols) + pixels.tobytes()


def idxLabels(labels):
    labels = np.asarray(labels, dtype=np.uint8)
    return struct.pack(">II", IDX_LABEL_MAGIC, len(labels)) + labels.tobytes()


def smoothDisk(side, radius, center=(0.0, 0.0), edge=3.0):
    """Disk with a raised-cosine edge of width 2 * edge, values in [0, 1]."""
    coords = np.arange(side, dtype=np.float64) - (side - 1) / 2.0
    x = coords[None, :] - center[0]
    y = -coords[:, None] - center[1]
    r = np.sqrt(x * x + y * y)
    t = np.clip((r - (radius - edge)) / (2.0 * edge), 0.0, 1.0)
    return 0.5 * (1.0 + np.cos(np.pi * t))


def digitLike(side=28, seed=0):
    """Blurry ring with a random offset, a stand-in for an MNIST digit."""
    rng = np.random.default_rng(seed)
    center = tuple(rng.uniform(-2.0, 2.0, size=2))
    outer = smoothDisk(side, side * 0.3, center, edge=1.5)
    inner = smoothDisk(side, side * 0.15, center, edge=1.5)
    return np.clip(outer - inner, 0.0, 1.0)


@pytest.fixture
def small_geometry():
    return ScanGeometry(image_side=8, detector_bins=12, candidate_angles=36)


@pytest.fixture
def default_geometry():
    return ScanGeometry()


@pytest.fixture
def eval_set_8():
    images = np.stack([digitLike(8, seed=d) for d in range(10)])
    return LabeledDataset(images=images, labels=np.arange(10))


@pytest.fixture
def mnist_dir(tmp_path):
    """Synthetic MNIST directory: 30 training images (10 zeros), 5 test images per digit."""
    rng = np.random.default_rng(0)
    trainLabels = np.arange(30) % 3
    testLabels = np.repeat(np.arange(10), 5)
    trainPixels = (
        np.stack([digitLike(28, seed=int(s)) for s in range(30)]) * 255
    ).astype(np.uint8)
    testPixels = rng.integers(0, 256, size=(50, 28, 28), dtype=np.uint8)

    (tmp_path / "train-images-idx3-ubyte").write_bytes(idxImages(trainPixels))
    (tmp_path / "train-labels-idx1-ubyte").write_bytes(idxLabels(trainLabels))
    with gzip.open(tmp_path / "t10k-images-idx3-ubyte.gz", "wb") as f:
        f.write(idxImages(testPixels))
    with gzip.open(tmp_path / "t10k-labels-idx1-ubyte.gz", "wb") as f:
        f.write(idxLabels(testLabels))
    return tmp_path
