"""Single-file checkpoints: JSON manifest plus a little-endian float32 blob.

Layout: 4-byte magic, u32 format version, u64 manifest length, the manifest
JSON, then the blob. The manifest carries the config, stage, step and a
parameter index mapping each name to shape, dtype and its byte span in the
blob. Saving the result of a load reproduces the blob byte for byte.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"C2CK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def params_from_model(model: torch.nn.Module) -> dict[str, torch.Tensor]:
    return {name: tensor.detach().clone()
            for name, tensor in model.state_dict().items()}


def save_checkpoint(params: dict[str, torch.Tensor], manifest_fields: dict,
                    path: str | Path) -> None:
    """Write parameters (sorted by name) and manifest metadata to ``path``."""
    index: dict[str, dict] = {}
    chunks: list[bytes] = []
    offset = 0
    for name in sorted(params):
        array = np.ascontiguousarray(
            params[name].detach().cpu().numpy().astype("<f4"))
        raw = array.tobytes()
        index[name] = {"shape": list(array.shape), "dtype": "float32",
                       "offset": offset, "length": len(raw)}
        chunks.append(raw)
        offset += len(raw)
    manifest = dict(manifest_fields)
    manifest["params"] = index
    manifest["blob_length"] = offset
    payload = json.dumps(manifest, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(payload)))
        fh.write(payload)
        for raw in chunks:
            fh.write(raw)


def load_checkpoint(path: str | Path) -> tuple[dict[str, torch.Tensor], dict]:
    """Read and validate a checkpoint; returns (params, manifest)."""
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack("<I", data[4:8])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (manifest_len,) = struct.unpack("<Q", data[8:16])
    manifest_end = 16 + manifest_len
    if manifest_end > len(data):
        raise CheckpointError(f"{path}: manifest length exceeds file size")
    manifest = json.loads(data[16:manifest_end].decode("utf-8"))
    blob = data[manifest_end:]
    expected = manifest.get("blob_length")
    if expected is not None and expected != len(blob):
        raise CheckpointError(
            f"{path}: blob length mismatch (manifest says {expected}, "
            f"file has {len(blob)})")

    params: dict[str, torch.Tensor] = {}
    for name, entry in manifest["params"].items():
        offset, length = entry["offset"], entry["length"]
        shape = tuple(entry["shape"])
        if entry["dtype"] != "float32":
            raise CheckpointError(f"{path}: parameter {name} has unsupported "
                                  f"dtype {entry['dtype']}")
        want = int(np.prod(shape, dtype=np.int64)) * 4 if shape else 4
        if length != want:
            raise CheckpointError(f"{path}: parameter {name} length {length} "
                                  f"does not match shape {shape}")
        if offset + length > len(blob):
            raise CheckpointError(
                f"{path}: blob length mismatch (parameter {name} spans past "
                f"the end of the blob)")
        array = np.frombuffer(blob, dtype="<f4", count=want // 4,
                              offset=offset).reshape(shape)
        params[name] = torch.from_numpy(array.copy())
    return params, manifest


def apply_params(model: torch.nn.Module, params: dict[str, torch.Tensor]) -> None:
    """Load parameters into the model, requiring an exact name/shape match."""
    state = model.state_dict()
    missing = sorted(set(state) - set(params))
    if missing:
        raise CheckpointError(f"checkpoint is missing parameter {missing[0]}")
    extra = sorted(set(params) - set(state))
    if extra:
        raise CheckpointError(f"checkpoint has unknown parameter {extra[0]}")
    for name, tensor in state.items():
        if tuple(params[name].shape) != tuple(tensor.shape):
            raise CheckpointError(
                f"parameter {name} shape {tuple(params[name].shape)} does not "
                f"match model shape {tuple(tensor.shape)}")
    model.load_state_dict({k: v.to(state[k].dtype) for k, v in params.items()})
