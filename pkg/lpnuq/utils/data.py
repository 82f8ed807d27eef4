import os
import gzip
import struct
import hashlib
import numpy as np

from dataclasses import dataclass, field

from lpnuq.errors import IdxFormatError
from lpnuq.utils import log

logger = log.setupCustomLogger(__name__)

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
MNIST_SIDE = 28

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}

DOWNLOAD_HELP = (
    "Download the four MNIST files (train-images-idx3-ubyte, train-labels-idx1-ubyte, "
    "t10k-images-idx3-ubyte, t10k-labels-idx1-ubyte, optionally .gz compressed) from "
    "https://ossci-datasets.s3.amazonaws.com/mnist/ and place them in the data directory "
    "(DATA_DIR in the config file or the LPNUQ_DATA_DIR environment variable)."
)


@dataclass(frozen=True)
class LabeledDataset:
    images: np.ndarray
    labels: np.ndarray
    provenance: dict = field(default_factory=dict)
    # positions of the images in their source file
    indices: np.ndarray | None = None

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise IdxFormatError(
                f"{len(self.images)} images but {len(self.labels)} labels"
            )
        if self.indices is None:
            object.__setattr__(self, "indices", np.arange(len(self.labels)))
        if len(self.images) and (self.images.min() < 0 or self.images.max() > 1):
            raise IdxFormatError("image pixels must lie in [0, 1]")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() > 9):
            raise IdxFormatError("labels must lie in 0..9")

    def __len__(self):
        return len(self.labels)

    def subset(self, positions):
        positions = np.asarray(positions, dtype=np.int64)
        return LabeledDataset(
            images=self.images[positions],
            labels=self.labels[positions],
            provenance=self.provenance,
            indices=self.indices[positions],
        )

    def of_digit(self, digit):
        return self.subset(np.flatnonzero(self.labels == digit))


def _header(raw, count, what):
    if len(raw) < 4 * count:
        raise IdxFormatError(f"{what}: truncated header ({len(raw)} bytes)")
    return struct.unpack(f">{count}I", raw[: 4 * count])


def parse_idx_images(raw):
    """
    Parses a big-endian IDX image file (magic 0x00000803, dims count x 28 x 28, one byte per pixel)
    into a float64 array of shape (count, 28, 28) scaled to [0, 1].
    """
    magic, count, rows, cols = _header(raw, 4, "image file")
    if magic != IDX_IMAGE_MAGIC:
        raise IdxFormatError(f"image file: wrong magic 0x{magic:08x}")
    if rows != MNIST_SIDE or cols != MNIST_SIDE:
        raise IdxFormatError(f"image file: expected 28x28 images, got {rows}x{cols}")

    expected = 16 + count * rows * cols
    if len(raw) != expected:
        raise IdxFormatError(
            f"image file: payload is {len(raw)} bytes, header implies {expected}"
        )
    pixels = np.frombuffer(raw, dtype=np.uint8, offset=16)
    return pixels.reshape(count, rows, cols).astype(np.float64) / 255.0


def parse_idx_labels(raw):
    magic, count = _header(raw, 2, "label file")
    if magic != IDX_LABEL_MAGIC:
        raise IdxFormatError(f"label file: wrong magic 0x{magic:08x}")
    if len(raw) != 8 + count:
        raise IdxFormatError(
            f"label file: payload is {len(raw)} bytes, header implies {8 + count}"
        )
    labels = np.frombuffer(raw, dtype=np.uint8, offset=8).astype(np.int64)
    if len(labels) and labels.max() > 9:
        raise IdxFormatError(f"label file: out-of-range label {labels.max()}")
    return labels


def _readBytes(dataDir, stem):
    for name, opener in ((stem, open), (stem + ".gz", gzip.open)):
        path = os.path.join(dataDir, name)
        if os.path.exists(path):
            with opener(path, "rb") as f:
                raw = f.read()
            return path, raw
    raise FileNotFoundError(f"Missing MNIST file {stem} in {dataDir}. {DOWNLOAD_HELP}")


def assembleDataset(imageBytes, labelBytes, provenance=None):
    images = parse_idx_images(imageBytes)
    labels = parse_idx_labels(labelBytes)
    if len(images) != len(labels):
        raise IdxFormatError(
            f"image file holds {len(images)} images but label file holds {len(labels)} labels"
        )
    return LabeledDataset(images=images, labels=labels, provenance=provenance or {})


def read_mnist(dataDir):
    """
    Reads the MNIST training and test files from `dataDir`.

    ### Parameters:
    ----------
    #### dataDir: str
    Directory holding the raw or gzip-compressed IDX files.

    ### Returns:
    ----------
    A (train, test) pair of LabeledDataset with SHA-256 provenance.
    """
    logger.info(f"START: reading MNIST from {dataDir}...")
    datasets = []
    for split in ("train", "test"):
        imagePath, imageBytes = _readBytes(dataDir, MNIST_FILES[f"{split}_images"])
        labelPath, labelBytes = _readBytes(dataDir, MNIST_FILES[f"{split}_labels"])
        provenance = {
            imagePath: hashlib.sha256(imageBytes).hexdigest(),
            labelPath: hashlib.sha256(labelBytes).hexdigest(),
        }
        dataset = assembleDataset(imageBytes, labelBytes, provenance)
        logger.info(f"Read {split} split, number of images: {len(dataset)}")
        datasets.append(dataset)
    logger.info("END: reading MNIST")
    return datasets[0], datasets[1]


def make_splits(train, test, trainDigit=0, evalPerDigit=10, seed=0):
    """
    Selects the prior's training images and the evaluation images.

    ### Parameters:
    ----------
    #### train: LabeledDataset
    The MNIST training split, only images of `trainDigit` are kept.

    #### test: LabeledDataset
    The MNIST test split, `evalPerDigit` images per digit are drawn from it.

    #### seed: int
    Seed of the evaluation draw.

    ### Returns:
    ----------
    A (trainSet, evalSet) pair. evalSet is ordered by digit, then by draw order.
    """
    trainSet = train.of_digit(trainDigit)
    if len(trainSet) == 0:
        raise IdxFormatError(f"no training images of digit {trainDigit}")

    rng = np.random.default_rng(seed)
    positions = []
    for digit in range(10):
        candidates = np.flatnonzero(test.labels == digit)
        if len(candidates) < evalPerDigit:
            raise IdxFormatError(
                f"digit {digit} has {len(candidates)} test images, {evalPerDigit} needed"
            )
        positions.extend(rng.choice(candidates, size=evalPerDigit, replace=False))

    return trainSet, test.subset(positions)


def evalImage(evalSet, digit, index):
    """Returns the `index`-th evaluation image of `digit`."""
    positions = np.flatnonzero(evalSet.labels == digit)
    if not 0 <= index < len(positions):
        raise IndexError(
            f"image index {index} out of range for digit {digit} ({len(positions)} images)"
        )
    return evalSet.images[positions[index]]
