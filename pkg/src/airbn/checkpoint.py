"""Bit-exact checkpoint serialization.

Layout: magic "IRVI", uint32 LE version, uint64 LE entry count, then for
each entry a uint32 LE name length, UTF-8 name, uint8 rank, rank uint64
LE dims, and the raw little-endian float64 payload; finally a uint64 LE
length-prefixed UTF-8 config text.  Save -> load -> save reproduces the
file byte for byte.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, parse_text, to_text
from .model import GenerativeParams, init_generative
from .numerics import RandomStream
from .recognition import RecognitionParams, init_recognition
from .training import OptimizerState

MAGIC = b"IRVI"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    gen: GenerativeParams
    rec: RecognitionParams
    opt_theta: OptimizerState
    opt_phi: OptimizerState
    config: ExperimentConfig
    epoch: int
    seed: int


def build_models(
    cfg: ExperimentConfig, rng: RandomStream
) -> tuple[GenerativeParams, RecognitionParams]:
    """Fresh generative + recognition parameters for a config."""
    gen = init_generative(
        cfg.layer_dims,
        cfg.prior_kind,
        rng.substream(0),
        hidden_dims=cfg.gen_hidden or None,
    )
    rec = init_recognition(gen, rng.substream(1), tanh_dims=cfg.rec_tanh or None)
    return gen, rec


def _entries(ckpt: Checkpoint) -> list[tuple[str, np.ndarray]]:
    out: list[tuple[str, np.ndarray]] = []
    for name, arr in ckpt.gen.arrays():
        out.append((f"gen.{name}", arr))
    for name, arr in ckpt.rec.arrays():
        out.append((f"rec.{name}", arr))
    for prefix, opt in (("opt_theta", ckpt.opt_theta), ("opt_phi", ckpt.opt_phi)):
        for name in sorted(opt.sq_avg):
            out.append((f"{prefix}.sq.{name}", opt.sq_avg[name]))
        out.append((f"{prefix}.step", np.float64(opt.step)))
        out.append((f"{prefix}.lr", np.float64(opt.lr)))
    out.append(("epoch", np.float64(ckpt.epoch)))
    out.append(("seed", np.float64(ckpt.seed)))
    return out


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    entries = _entries(ckpt)
    config_bytes = to_text(ckpt.config).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<Q", len(entries)))
        for name, arr in entries:
            arr = np.asarray(arr, dtype="<f8")
            name_b = name.encode("utf-8")
            f.write(struct.pack("<I", len(name_b)))
            f.write(name_b)
            f.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                f.write(struct.pack("<Q", d))
            f.write(arr.tobytes())
        f.write(struct.pack("<Q", len(config_bytes)))
        f.write(config_bytes)


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw = raw
        self.pos = 0
        self.path = path

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointError(f"truncated {what} in {self.path}")
        chunk = self.raw[self.pos : self.pos + n]
        self.pos += n
        return chunk


def _read_entries(path: str | Path) -> tuple[dict[str, np.ndarray], str]:
    r = _Reader(Path(path).read_bytes(), path)
    if r.take(4, "magic") != MAGIC:
        raise CheckpointError(f"bad magic in {path}: not a checkpoint file")
    (version,) = struct.unpack("<I", r.take(4, "version"))
    if version != VERSION:
        raise CheckpointError(f"version mismatch in {path}: got {version}, want {VERSION}")
    (count,) = struct.unpack("<Q", r.take(8, "entry count"))
    entries: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", r.take(4, "entry header"))
        name = r.take(name_len, "entry name").decode("utf-8")
        (rank,) = struct.unpack("<B", r.take(1, f"entry {name}"))
        dims = [
            struct.unpack("<Q", r.take(8, f"entry {name}"))[0] for _ in range(rank)
        ]
        n_vals = int(np.prod(dims)) if dims else 1
        payload = r.take(8 * n_vals, f"entry {name}")
        arr = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(dims)
        entries[name] = arr
    (config_len,) = struct.unpack("<Q", r.take(8, "config length"))
    config_text = r.take(config_len, "config text").decode("utf-8")
    return entries, config_text


def load_checkpoint(path: str | Path) -> Checkpoint:
    entries, config_text = _read_entries(path)
    cfg = parse_text(config_text)
    gen, rec = build_models(cfg, RandomStream(0))

    def fill(prefix: str, params) -> None:
        for name, arr in params.arrays():
            key = f"{prefix}.{name}"
            if key not in entries:
                raise CheckpointError(f"missing entry {key} in {path}")
            if entries[key].shape != arr.shape:
                raise CheckpointError(
                    f"shape mismatch for {key}: file {entries[key].shape}, "
                    f"config implies {arr.shape}"
                )
            arr[...] = entries[key]

    fill("gen", gen)
    fill("rec", rec)

    def read_opt(prefix: str) -> OptimizerState:
        opt = OptimizerState(lr=float(entries[f"{prefix}.lr"]))
        opt.step = int(entries[f"{prefix}.step"])
        sq_prefix = f"{prefix}.sq."
        for key in entries:
            if key.startswith(sq_prefix):
                opt.sq_avg[key[len(sq_prefix) :]] = entries[key].copy()
        return opt

    return Checkpoint(
        gen=gen,
        rec=rec,
        opt_theta=read_opt("opt_theta"),
        opt_phi=read_opt("opt_phi"),
        config=cfg,
        epoch=int(entries["epoch"]),
        seed=int(entries["seed"]),
    )
