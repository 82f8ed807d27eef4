import os
import numpy as np
import pandas as pd

from lpnuq.utils import log

logger = log.setupCustomLogger(__name__)

SCHEMA_VERSIONS = {
    "train_log": 1,
    "reconstruction": 1,
    "uq_summary": 1,
    "image_values": 1,
    "cell": 1,
    "manifest": 2,
    "summary": 1,
    "digit_std": 1,
    "error_correlation": 1,
}

MANIFEST_COLUMNS = ["digit", "index", "n_views", "status", "message", "fingerprint"]

PGM_MAX = 65535
# population std of values in [0, 1] is at most 0.5
STD_PGM_SCALE = 2.0


def _ensureDir(path):
    directory = os.path.dirname(path)
    if directory and not os.path.exists(directory):
        os.makedirs(directory, exist_ok=True)


def write_csv(path, frame, schema):
    """
    Writes a DataFrame to CSV behind a `# lpnuq-schema: <name>/<version>` header line.

    ### Parameters:
    ----------
    #### path: str
    #### frame: pandas.DataFrame
    #### schema: str
    One of SCHEMA_VERSIONS.
    """
    if schema not in SCHEMA_VERSIONS:
        raise ValueError(f"Invalid schema: {schema}")
    _ensureDir(path)
    with open(path, "w", newline="") as f:
        f.write(f"# lpnuq-schema: {schema}/{SCHEMA_VERSIONS[schema]}\n")
        frame.to_csv(f, header=True, index=False, lineterminator="\n")
    logger.debug(f"Wrote {len(frame)} rows to {path}")


def read_csv(path):
    # row 0 is the schema line
    return pd.read_csv(path, header=1, engine="pyarrow")


def writeImageValues(path, image):
    """Raw pixel values in row-major order, one per row."""
    values = np.asarray(image, dtype=np.float64).ravel()
    write_csv(path, pd.DataFrame({"value": values}), "image_values")


def write_pgm16(path, image, scale=1.0):
    """
    Writes a binary 16-bit PGM (P5, maxval 65535, big-endian samples).
    Pixel values are multiplied by `scale`, clipped to [0, 1] and mapped onto 0..65535.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError(f"PGM output needs a 2-D image, got shape {image.shape}")
    samples = np.rint(np.clip(image * scale, 0.0, 1.0) * PGM_MAX).astype(">u2")
    height, width = image.shape
    _ensureDir(path)
    with open(path, "wb") as f:
        f.write(f"P5\n{width} {height}\n{PGM_MAX}\n".encode("ascii"))
        f.write(samples.tobytes())


def readPgm16(path):
    with open(path, "rb") as f:
        raw = f.read()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5" or int(parts[3]) != PGM_MAX:
        raise ValueError(f"{path} is not a 16-bit binary PGM")
    width, height = int(parts[1]), int(parts[2])
    samples = np.frombuffer(raw[len(raw) - 2 * width * height :], dtype=">u2")
    return samples.reshape(height, width).astype(np.float64) / PGM_MAX


def readManifest(path):
    if not os.path.exists(path):
        return pd.DataFrame(columns=MANIFEST_COLUMNS)
    # manifests without a fingerprint column never match a run
    return read_csv(path).reindex(columns=MANIFEST_COLUMNS)


def writeManifest(path, rows):
    frame = pd.DataFrame(rows, columns=MANIFEST_COLUMNS)
    frame = frame.sort_values(["digit", "index", "n_views"], kind="stable")
    write_csv(path, frame.reset_index(drop=True), "manifest")
