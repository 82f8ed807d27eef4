import os
import struct
import numpy as np
import torch

from lpnuq.errors import CheckpointError
from lpnuq.prior.icnn import PriorModel
from lpnuq.utils import log

logger = log.setupCustomLogger(__name__)

# Layout (little-endian):
#   8 bytes  magic
#   u32      format version
#   u32      number of layer sizes L, then L x u32 sizes (input, hidden..., 1)
#   f64      beta, f64 alpha
#   f64[]    parameters, state_dict entries sorted by key
MAGIC = b"LPNUQICN"
VERSION = 2


def _orderedParams(model):
    return [t.detach() for _, t in sorted(model.state_dict().items())]


def save_model(model, path):
    sizes = [model.input_dim, *model.hidden, 1]
    header = MAGIC + struct.pack(
        f"<II{len(sizes)}Idd", VERSION, len(sizes), *sizes, model.beta, model.alpha
    )
    payload = b"".join(
        p.cpu().numpy().astype("<f8").tobytes() for p in _orderedParams(model)
    )

    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "wb") as f:
        f.write(header + payload)
    logger.info(f"Saved prior checkpoint to {path}")


def load_model(path):
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e

    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path} is not a prior checkpoint (bad magic)")
    offset = len(MAGIC)
    try:
        version, nSizes = struct.unpack_from("<II", raw, offset)
        if version != VERSION:
            raise CheckpointError(
                f"{path}: checkpoint version {version}, expected {VERSION}"
            )
        offset += 8
        sizes = struct.unpack_from(f"<{nSizes}I", raw, offset)
        offset += 4 * nSizes
        beta, alpha = struct.unpack_from("<dd", raw, offset)
        offset += 16
    except struct.error as e:
        raise CheckpointError(f"{path}: truncated header") from e

    if nSizes < 3 or sizes[-1] != 1 or min(sizes) < 1:
        raise CheckpointError(f"{path}: invalid layer sizes {sizes}")

    expected = _parameterCount(sizes)
    if len(raw) - offset != 8 * expected:
        raise CheckpointError(
            f"{path}: payload holds {(len(raw) - offset) / 8:g} values, {expected} expected"
        )
    values = np.frombuffer(raw, dtype="<f8", offset=offset)
    if not np.all(np.isfinite(values)):
        raise CheckpointError(f"{path}: non-finite parameter values")

    model = PriorModel(inputDim=sizes[0], hidden=sizes[1:-1], beta=beta, alpha=alpha)
    state = model.state_dict()

    loaded = {}
    start = 0
    for name in sorted(state):
        count = state[name].numel()
        loaded[name] = torch.from_numpy(
            values[start : start + count].astype(np.float64).reshape(state[name].shape)
        )
        start += count
    model.load_state_dict(loaded)
    return model.eval()


def _parameterCount(sizes):
    n, hidden = sizes[0], sizes[1:-1]
    count = sum(n * h + h for h in hidden)
    count += sum(a * b for a, b in zip(hidden[:-1], hidden[1:]))
    return count + hidden[-1] + n
