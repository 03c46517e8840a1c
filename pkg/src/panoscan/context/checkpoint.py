"""PSPM checkpoint container.

Layout (little-endian): magic ``b"PSPM"``, u32 format version, then blobs until
EOF.  Each blob is u32 name length, UTF-8 name, u32 rank, rank x u64 dims and
the f64 data in C order.  Metadata (model config, run settings) travels in a
blob named ``meta/config`` whose values are the UTF-8 bytes of a ``key = value``
text, one byte per f64.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import torch

from .network import DTYPE, ModelConfig, ScanpathModel

MAGIC = b"PSPM"
VERSION = 1
META = "meta/config"


class CheckpointError(ValueError):
    pass


def write_blobs(path, blobs: dict[str, np.ndarray]) -> None:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    for name, arr in blobs.items():
        arr = np.require(arr, dtype="<f8", requirements="C")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_blobs(path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a PSPM checkpoint")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    pos = 8
    blobs = {}
    try:
        while pos < len(buf):
            (n,) = struct.unpack_from("<I", buf, pos)
            name = buf[pos + 4: pos + 4 + n].decode("utf-8")
            pos += 4 + n
            (rank,) = struct.unpack_from("<I", buf, pos)
            dims = struct.unpack_from(f"<{rank}Q", buf, pos + 4)
            pos += 4 + 8 * rank
            count = int(np.prod(dims, dtype=np.int64))
            if pos + 8 * count > len(buf):
                raise CheckpointError(f"{path}: blob {name!r} truncated")
            blobs[name] = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).reshape(dims).copy()
            pos += 8 * count
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated header") from exc
    return blobs


def _encode_text(text: str) -> np.ndarray:
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.float64)


def _decode_text(arr: np.ndarray) -> str:
    return arr.astype(np.uint8).tobytes().decode("utf-8")


def save_model(path, model: ScanpathModel, extra: dict | None = None) -> None:
    meta = {f"model.{k}": v for k, v in model.cfg.to_dict().items()}
    meta.update(extra or {})
    blobs = {META: _encode_text("".join(f"{k} = {v!r}\n" if isinstance(v, float) else f"{k} = {v}\n"
                                        for k, v in sorted(meta.items())))}
    for name, p in model.named_parameters():
        blobs[name] = p.detach().numpy()
    write_blobs(path, blobs)


def load_model(path) -> tuple[ScanpathModel, dict]:
    """Rebuild a model; returns (model, metadata dict of strings)."""
    blobs = read_blobs(path)
    if META not in blobs:
        raise CheckpointError(f"{path}: missing {META}")
    meta = {}
    for line in _decode_text(blobs.pop(META)).splitlines():
        k, _, v = line.partition("=")
        meta[k.strip()] = v.strip()
    cfg = ModelConfig.from_dict({k[6:]: v for k, v in meta.items() if k.startswith("model.")})
    model = ScanpathModel(cfg)
    params = dict(model.named_parameters())
    missing = set(params) - set(blobs)
    if missing:
        raise CheckpointError(f"{path}: missing parameters {sorted(missing)}")
    with torch.no_grad():
        for name, arr in blobs.items():
            if name not in params:
                raise CheckpointError(f"{path}: unexpected blob {name!r}")
            if tuple(arr.shape) != tuple(params[name].shape):
                raise CheckpointError(f"{path}: {name} has shape {arr.shape}, expected {tuple(params[name].shape)}")
            params[name].copy_(torch.from_numpy(arr).to(DTYPE))
    return model, meta
