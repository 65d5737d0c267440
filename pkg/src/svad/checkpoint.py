"""
Binary checkpoint container (little-endian):

    magic b"SVADCKPT" | u32 version | u32 len + UTF-8 descriptor
    | u32 n_arrays | per array: u32 name_len, name, u32 rank, u32 dims[rank], float32 data

The descriptor is sorted ``key=value`` lines covering the architecture, LIF
parameters and optional training state.
"""

from __future__ import annotations

import struct

import numpy as np

from .audio import atomic_write
from .errors import ConfigError
from .model import SVAD, Architecture
from .snn import LifParams
from .training import AdamState

MAGIC = b"SVADCKPT"
VERSION = 1


def _descriptor(model: SVAD, adam: AdamState | None, epoch: int | None) -> str:
    d = {f"arch.{k}": v for k, v in model.arch.to_dict().items()}
    d.update({"lif.alpha": model.lif.alpha, "lif.theta": model.lif.theta, "lif.a": model.lif.a})
    if epoch is not None:
        d["train.epoch"] = epoch
    if adam is not None:
        d["train.adam_t"] = adam.t
    return "".join(f"{k}={repr(v) if isinstance(v, float) else v}\n" for k, v in sorted(d.items()))


def checkpoint_bytes(model: SVAD, adam: AdamState | None = None, epoch: int | None = None) -> bytes:
    arrays = dict(model.params)
    if adam is not None:
        for k in model.params:
            arrays[f"adam.m.{k}"] = adam.m[k]
            arrays[f"adam.v.{k}"] = adam.v[k]
    desc = _descriptor(model, adam, epoch).encode()
    parts = [MAGIC, struct.pack("<II", VERSION, len(desc)), desc, struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        raw = name.encode()
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def save_checkpoint(path, model: SVAD, adam: AdamState | None = None, epoch: int | None = None):
    atomic_write(path, checkpoint_bytes(model, adam, epoch))


def parse_checkpoint(data: bytes):
    """Returns (model, adam or None, epoch or None)."""
    if data[:8] != MAGIC:
        raise ConfigError("not a checkpoint (bad magic)")
    try:
        version, dlen = struct.unpack_from("<II", data, 8)
        if version != VERSION:
            raise ConfigError(f"unsupported checkpoint version {version}")
        pos = 16
        desc = data[pos:pos + dlen].decode()
        pos += dlen
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        arrays = {}
        for _ in range(n):
            (nl,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos:pos + nl].decode()
            pos += nl
            (rank,) = struct.unpack_from("<I", data, pos)
            dims = struct.unpack_from(f"<{rank}I", data, pos + 4)
            pos += 4 + 4 * rank
            count = int(np.prod(dims)) if rank else 1
            if pos + 4 * count > len(data):
                raise ConfigError(f"checkpoint truncated in array {name!r}")
            arrays[name] = np.frombuffer(data, dtype="<f4", count=count, offset=pos).reshape(dims).astype(np.float32)
            pos += 4 * count
    except struct.error as e:
        raise ConfigError(f"checkpoint truncated ({e})") from None
    if pos != len(data):
        raise ConfigError("trailing bytes after checkpoint arrays")
    meta = dict(line.split("=", 1) for line in desc.splitlines() if line)
    arch = Architecture.from_dict({k[5:]: v for k, v in meta.items() if k.startswith("arch.")})
    lif = LifParams(float(meta["lif.alpha"]), float(meta["lif.theta"]), float(meta["lif.a"]))
    params = {k: v for k, v in arrays.items() if not k.startswith("adam.")}
    model = SVAD(arch, params, lif)
    adam = None
    if "train.adam_t" in meta:
        adam = AdamState({k: arrays[f"adam.m.{k}"] for k in params},
                         {k: arrays[f"adam.v.{k}"] for k in params}, int(meta["train.adam_t"]))
    epoch = int(meta["train.epoch"]) if "train.epoch" in meta else None
    return model, adam, epoch


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return parse_checkpoint(fh.read())
