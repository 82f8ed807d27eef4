import struct
import numpy as np
import pytest
import torch

from lpnuq.errors import CheckpointError
from lpnuq.prior.checkpoint import MAGIC, VERSION, load_model, save_model
from lpnuq.prior.icnn import PriorModel, potential, prox_apply


def _model():
    torch.manual_seed(0)
    return PriorModel(inputDim=16, hidden=(8, 4), beta=10.0, alpha=0.05)


def test_saved_model_loads_with_identical_parameters(tmp_path):
    model = _model()
    path = tmp_path / "prior.lpn"
    save_model(model, str(path))
    loaded = load_model(str(path))

    assert loaded.input_dim == 16
    assert loaded.hidden == (8, 4)
    assert loaded.beta == 10.0
    assert loaded.alpha == 0.05
    for name, p in model.state_dict().items():
        assert torch.equal(p, loaded.state_dict()[name]), name

    z = np.random.default_rng(0).standard_normal(16)
    assert potential(loaded, z) == potential(model, z)
    np.testing.assert_array_equal(prox_apply(loaded, z), prox_apply(model, z))


def test_saving_twice_gives_identical_bytes(tmp_path):
    model = _model()
    save_model(model, str(tmp_path / "a.lpn"))
    save_model(model, str(tmp_path / "b.lpn"))
    assert (tmp_path / "a.lpn").read_bytes() == (tmp_path / "b.lpn").read_bytes()


def test_header_layout(tmp_path):
    path = tmp_path / "prior.lpn"
    save_model(_model(), str(path))
    raw = path.read_bytes()
    assert raw[:8] == MAGIC
    assert struct.unpack_from("<II", raw, 8) == (VERSION, 4)
    assert struct.unpack_from("<4I", raw, 16) == (16, 8, 4, 1)


def _saved(tmp_path):
    path = tmp_path / "prior.lpn"
    save_model(_model(), str(path))
    return path, bytearray(path.read_bytes())


def test_rejects_bad_magic(tmp_path):
    path, raw = _saved(tmp_path)
    raw[0:8] = b"NOTACKPT"
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError):
        load_model(str(path))


def test_rejects_unknown_version(tmp_path):
    path, raw = _saved(tmp_path)
    raw[8:12] = struct.pack("<I", VERSION + 1)
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError):
        load_model(str(path))


def test_rejects_truncated_payload(tmp_path):
    path, raw = _saved(tmp_path)
    path.write_bytes(bytes(raw[:-4]))
    with pytest.raises(CheckpointError):
        load_model(str(path))
    path.write_bytes(bytes(raw[:14]))
    with pytest.raises(CheckpointError):
        load_model(str(path))


def test_rejects_non_finite_parameters(tmp_path):
    path, raw = _saved(tmp_path)
    raw[-8:] = struct.pack("<d", float("nan"))
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError):
        load_model(str(path))


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        load_model(str(tmp_path / "missing.lpn"))


def test_payload_holds_every_parameter(tmp_path):
    model = _model()
    path = tmp_path / "prior.lpn"
    save_model(model, str(path))
    header = 8 + 8 + 4 * 4 + 16
    count = sum(p.numel() for p in model.parameters())
    # 16*8 + 8 + 16*4 + 4 input layers, 8*4 convex, 4 + 16 output
    assert count == 256
    assert len(path.read_bytes()) == header + 8 * count
