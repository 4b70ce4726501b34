"""Dataset ingestion, binarization, batching, and synthetic teacher data.

Two on-disk formats are supported: standard IDX image containers and a
plain binary-matrix format ("BMAT": magic, two little-endian uint64
sizes N and D, then N*D bytes in {0,1}).  The mean image attached to a
dataset always comes from its training split.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import GenerativeParams, ancestral_sample
from .numerics import RandomStream

IDX_MAGIC_IMAGES = 0x00000803
IDX_MAGIC_LABELS = 0x00000801
BMAT_MAGIC = b"BMAT"


@dataclass
class BinaryDataset:
    """Strictly binary rows plus the train-split mean image."""

    rows: np.ndarray  # [N x D], entries in {0, 1}
    split: str  # train | valid | test
    mean_image: np.ndarray  # [D], computed from the train split only

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        self.mean_image = np.asarray(self.mean_image, dtype=np.float64)
        if not np.isin(self.rows, (0.0, 1.0)).all():
            raise ValueError("dataset rows must be strictly binary")

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]


def load_idx(path: str | Path) -> np.ndarray:
    """Parse an IDX image file into a flattened [N x rows*cols] uint8 matrix."""
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise ValueError(f"truncated header in {path}")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic == IDX_MAGIC_LABELS:
        raise ValueError(f"wrong magic in {path}: got a label file, expected images")
    if magic != IDX_MAGIC_IMAGES:
        raise ValueError(f"bad magic 0x{magic:08x} in {path}")
    if len(raw) < 16:
        raise ValueError(f"truncated header in {path}")
    n, rows, cols = struct.unpack(">III", raw[4:16])
    payload = raw[16:]
    if len(payload) < n * rows * cols:
        raise ValueError(
            f"truncated payload in {path}: expected {n * rows * cols} bytes, "
            f"got {len(payload)}"
        )
    mat = np.frombuffer(payload[: n * rows * cols], dtype=np.uint8)
    return mat.reshape(n, rows * cols).copy()


def write_idx(path: str | Path, images: np.ndarray, rows: int, cols: int) -> None:
    """Write a [N x rows*cols] uint8 matrix as an IDX image file."""
    images = np.asarray(images, dtype=np.uint8)
    n = images.shape[0]
    if images.shape[1] != rows * cols:
        raise ValueError("image width does not match rows*cols")
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_MAGIC_IMAGES, n, rows, cols))
        f.write(images.tobytes())


def binarize(raw: np.ndarray, mode: str = "threshold") -> np.ndarray:
    """Map a 0..255 matrix to {0,1}: value >= 128 becomes 1.

    Inputs that are already strictly {0,1} pass through unchanged.
    """
    if mode != "threshold":
        raise ValueError(f"unknown binarization mode {mode!r}")
    raw = np.asarray(raw)
    if np.isin(raw, (0, 1)).all():
        return raw.astype(np.float64)
    return (raw >= 128).astype(np.float64)


def load_bmat(path: str | Path) -> np.ndarray:
    """Read a BMAT binary-matrix file into a [N x D] {0,1} float matrix."""
    raw = Path(path).read_bytes()
    if len(raw) < 20:
        raise ValueError(f"truncated header in {path}")
    if raw[:4] != BMAT_MAGIC:
        raise ValueError(f"bad magic in {path}: expected BMAT")
    n, d = struct.unpack("<QQ", raw[4:20])
    if len(raw) < 20 + n * d:
        raise ValueError(f"truncated payload in {path}")
    mat = np.frombuffer(raw[20 : 20 + n * d], dtype=np.uint8).reshape(n, d)
    if mat.size and mat.max() > 1:
        raise ValueError(f"non-binary byte in {path}")
    return mat.astype(np.float64)


def save_bmat(path: str | Path, rows: np.ndarray) -> None:
    rows = np.asarray(rows)
    if rows.size and not np.isin(rows, (0, 1)).all():
        raise ValueError("BMAT rows must be strictly binary")
    n, d = rows.shape
    with open(path, "wb") as f:
        f.write(BMAT_MAGIC)
        f.write(struct.pack("<QQ", n, d))
        f.write(rows.astype(np.uint8).tobytes())


def make_splits(
    train: np.ndarray, valid: np.ndarray, test: np.ndarray
) -> dict[str, BinaryDataset]:
    """Attach the train-split mean image to all three splits."""
    mean_image = np.asarray(train, dtype=np.float64).mean(axis=0)
    return {
        "train": BinaryDataset(train, "train", mean_image),
        "valid": BinaryDataset(valid, "valid", mean_image),
        "test": BinaryDataset(test, "test", mean_image),
    }


def synth_teacher(
    teacher: GenerativeParams, n_per_split: dict[str, int], rng: RandomStream
) -> dict[str, BinaryDataset]:
    """Ancestral-sample disjoint train/valid/test splits from a teacher model.

    Each split uses its own substream, so splits are disjoint by
    construction and individually reproducible from the seed.
    """
    xs = {}
    for i, split in enumerate(("train", "valid", "test")):
        x, _ = ancestral_sample(teacher, rng.substream(i), n=n_per_split[split])
        xs[split] = x
    return make_splits(xs["train"], xs["valid"], xs["test"])


def batches(
    ds: BinaryDataset, batch_size: int, rng: RandomStream | None = None, shuffle: bool = True
):
    """Yield row-index blocks covering the dataset (short final block kept)."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.arange(ds.n)
    if shuffle:
        if rng is None:
            raise ValueError("shuffling requires an rng")
        order = rng.generator.permutation(ds.n)
    for start in range(0, ds.n, batch_size):
        yield order[start : start + batch_size]
