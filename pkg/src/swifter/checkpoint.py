"""Binary checkpoint format.

Layout: magic ``SWFT`` | u32 version | u64 JSON header length | JSON header
| raw little-endian float32 tensor payload.

The header holds the model configs, optional extras (e.g. the vocabulary
tokens so a checkpoint is self-contained for captioning), and a name ->
{shape, offset} table; offsets are byte positions into the payload.
Weights are stored as float32, so save -> load is value-exact at float32.
"""

import json
import struct

import numpy as np

from .backbone import SwiftConfig
from .errors import ContractError
from .model import FusionConfig, SwifterModel

MAGIC = b"SWFT"
VERSION = 1


def save_checkpoint(path, model: SwifterModel, extra: dict | None = None) -> None:
    tensors = {}
    payload = bytearray()
    for name, t in model.named_params():
        raw = np.ascontiguousarray(t.data, dtype="<f4")
        tensors[name] = {"shape": list(t.data.shape), "offset": len(payload)}
        payload.extend(raw.tobytes())
    header = {
        "config": {
            "fusion": model.fusion.cfg.to_dict(),
            "swift": _swift_to_dict(model.backbone.cfg) if model.backbone else None,
        },
        "tensors": tensors,
        "dtype": "f32",
    }
    if extra:
        header["extra"] = extra
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<Q", len(hbytes)))
        f.write(hbytes)
        f.write(payload)


def load_checkpoint(path) -> tuple[SwifterModel, dict]:
    """Rebuild the model; returns (model, extra-dict from the header)."""
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise ContractError(f"{path} is not a SWFT checkpoint")
        (version,) = struct.unpack("<I", f.read(4))
        if version != VERSION:
            raise ContractError(f"unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode("utf-8"))
        payload = f.read()
    fusion_cfg = FusionConfig(**header["config"]["fusion"])
    swift_dict = header["config"]["swift"]
    swift_cfg = _swift_from_dict(swift_dict) if swift_dict else None
    model = SwifterModel.init(fusion_cfg, swift_cfg, seed=0)
    table = header["tensors"]
    for name, t in model.named_params():
        if name not in table:
            raise ContractError(f"checkpoint is missing tensor {name}")
        entry = table[name]
        shape = tuple(entry["shape"])
        if shape != t.data.shape:
            raise ContractError(f"shape mismatch for {name}: {shape} vs {t.data.shape}")
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        off = entry["offset"]
        raw = np.frombuffer(payload, dtype="<f4", count=n, offset=off)
        t.data = raw.reshape(shape).astype(np.float64)
    return model, header.get("extra", {})


def checkpoint_scalar_count(path) -> int:
    """Number of scalars serialized in the checkpoint (for the parameter audit)."""
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise ContractError(f"{path} is not a SWFT checkpoint")
        f.read(4)
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode("utf-8"))
    total = 0
    for entry in header["tensors"].values():
        total += int(np.prod(entry["shape"], dtype=np.int64)) if entry["shape"] else 1
    return total


def _swift_to_dict(cfg: SwiftConfig) -> dict:
    return {
        "patch_size": cfg.patch_size,
        "embed_dim": cfg.embed_dim,
        "stage_depths": list(cfg.stage_depths),
        "window": cfg.window,
        "shift_every_other": cfg.shift_every_other,
        "in_channels": cfg.in_channels,
        "image_size": cfg.image_size,
        "ff_expansion": cfg.ff_expansion,
    }


def _swift_from_dict(d: dict) -> SwiftConfig:
    return SwiftConfig(**d)
