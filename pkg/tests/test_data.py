import struct
import numpy as np
import pytest

from lpnuq.errors import IdxFormatError
from lpnuq.utils import data as dataUtils
from lpnuq.utils.data import LabeledDataset

from tests.conftest import idxImages, idxLabels


def _twoImages():
    pixels = np.zeros((2, 28, 28), dtype=np.uint8)
    pixels[0, 0, 0] = 255
    pixels[0, 5, 7] = 128
    pixels[1, 27, 27] = 1
    return pixels


def test_parse_images_fixture():
    images = dataUtils.parse_idx_images(idxImages(_twoImages()))
    assert images.shape == (2, 28, 28)
    assert images[0, 0, 0] == 1.0
    assert images[0, 5, 7] == 128 / 255
    assert images[1, 27, 27] == 1 / 255
    assert images.sum() == pytest.approx((255 + 128 + 1) / 255)


def test_parse_images_empty():
    images = dataUtils.parse_idx_images(struct.pack(">IIII", 0x803, 0, 28, 28))
    assert images.shape == (0, 28, 28)


def test_parse_images_rejects_label_magic():
    raw = idxImages(_twoImages())
    with pytest.raises(IdxFormatError):
        dataUtils.parse_idx_images(struct.pack(">I", 0x801) + raw[4:])


def test_parse_images_rejects_truncation():
    raw = idxImages(_twoImages())
    with pytest.raises(IdxFormatError):
        dataUtils.parse_idx_images(raw[:-1])
    with pytest.raises(IdxFormatError):
        dataUtils.parse_idx_images(raw[:10])


def test_parse_images_rejects_other_dimensions():
    raw = struct.pack(">IIII", 0x803, 1, 27, 28) + bytes(27 * 28)
    with pytest.raises(IdxFormatError):
        dataUtils.parse_idx_images(raw)


def test_parse_labels():
    np.testing.assert_array_equal(dataUtils.parse_idx_labels(idxLabels([0, 7])), [0, 7])


def test_parse_labels_rejects_out_of_range():
    with pytest.raises(IdxFormatError):
        dataUtils.parse_idx_labels(idxLabels([3, 10]))


def test_parse_labels_rejects_truncation():
    with pytest.raises(IdxFormatError):
        dataUtils.parse_idx_labels(idxLabels([1, 2, 3])[:-1])


def test_assembly_rejects_count_mismatch():
    with pytest.raises(IdxFormatError):
        dataUtils.assembleDataset(idxImages(_twoImages()), idxLabels([1, 2, 3]))


def test_read_mnist_accepts_raw_and_gzip(mnist_dir):
    train, test = dataUtils.read_mnist(str(mnist_dir))
    assert len(train) == 30
    assert len(test) == 50
    assert train.images.shape == (30, 28, 28)
    assert len(train.provenance) == 2
    assert all(len(digest) == 64 for digest in test.provenance.values())


def test_read_mnist_reports_download_help(tmp_path):
    with pytest.raises(FileNotFoundError) as info:
        dataUtils.read_mnist(str(tmp_path))
    assert "ossci-datasets" in str(info.value)


def _datasets(perDigit=12):
    trainLabels = np.arange(40) % 4
    train = LabeledDataset(images=np.zeros((40, 28, 28)), labels=trainLabels)
    testLabels = np.repeat(np.arange(10), perDigit)
    test = LabeledDataset(
        images=np.random.default_rng(0).random((len(testLabels), 28, 28)),
        labels=testLabels,
    )
    return train, test


def test_make_splits_protocol():
    train, test = _datasets()
    trainSet, evalSet = dataUtils.make_splits(train, test, trainDigit=0, evalPerDigit=10, seed=3)
    assert len(trainSet) == 10
    assert np.all(trainSet.labels == 0)
    assert len(evalSet) == 100
    assert np.all(np.bincount(evalSet.labels, minlength=10) == 10)
    assert len(set(evalSet.indices.tolist())) == 100


def test_make_splits_is_deterministic_per_seed():
    train, test = _datasets()
    _, a = dataUtils.make_splits(train, test, seed=1)
    _, b = dataUtils.make_splits(train, test, seed=1)
    _, c = dataUtils.make_splits(train, test, seed=2)
    np.testing.assert_array_equal(a.indices, b.indices)
    assert not np.array_equal(a.indices, c.indices)


def test_make_splits_needs_enough_images_per_digit():
    train, test = _datasets(perDigit=5)
    with pytest.raises(IdxFormatError):
        dataUtils.make_splits(train, test, evalPerDigit=10)


def test_eval_image_lookup():
    train, test = _datasets()
    _, evalSet = dataUtils.make_splits(train, test, seed=0)
    image = dataUtils.evalImage(evalSet, 4, 2)
    position = np.flatnonzero(evalSet.labels == 4)[2]
    np.testing.assert_array_equal(image, evalSet.images[position])
    with pytest.raises(IndexError):
        dataUtils.evalImage(evalSet, 4, 10)


def test_dataset_rejects_bad_labels():
    with pytest.raises(IdxFormatError):
        LabeledDataset(images=np.zeros((1, 28, 28)), labels=np.array([11]))
