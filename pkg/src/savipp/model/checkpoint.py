"""Binary parameter snapshots tied to the digest of the config that built them."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .config import ModelConfig

MAGIC = b"SVCK"


class CheckpointMismatch(RuntimeError):
    """Checkpoint was written for a different model config."""


def save_checkpoint(path, state: dict, cfg: ModelConfig, step: int | None = None) -> None:
    """Write ``state`` (name -> array) plus a JSON sidecar holding the config."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    parts = [MAGIC, cfg.digest(), struct.pack("<I", len(state))]
    for name in sorted(state):
        arr = np.ascontiguousarray(state[name], dtype="<f4")
        raw = name.encode()
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    path.write_bytes(b"".join(parts))
    side = {"model": cfg.to_dict()}
    if step is not None:
        side["step"] = int(step)
    path.with_suffix(".json").write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")


def read_checkpoint(path) -> tuple[bytes, dict]:
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    digest = blob[4:36]
    (count,) = struct.unpack_from("<I", blob, 36)
    off = 40
    state = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<I", blob, off)
        name = blob[off + 4:off + 4 + n].decode()
        off += 4 + n
        (rank,) = struct.unpack_from("<I", blob, off)
        shape = struct.unpack_from(f"<{rank}I", blob, off + 4)
        off += 4 + 4 * rank
        size = int(np.prod(shape, dtype=np.int64))
        state[name] = np.frombuffer(blob, dtype="<f4", count=size, offset=off).reshape(shape).copy()
        off += 4 * size
    if off != len(blob):
        raise ValueError(f"{path}: {len(blob) - off} trailing bytes")
    return digest, state


def load_config(path) -> ModelConfig:
    side = json.loads(Path(path).with_suffix(".json").read_text())
    return ModelConfig.from_dict(side["model"])


def load_checkpoint(path, model) -> None:
    """Load into ``model``; refuses when the stored digest differs from the model's config."""
    digest, state = read_checkpoint(path)
    if digest != model.cfg.digest():
        raise CheckpointMismatch(
            f"{path} was written for a different model config (digest {digest.hex()[:12]} vs "
            f"{model.cfg.digest().hex()[:12]}); rebuild the model from its sidecar config")
    model.load_state_dict(state)
