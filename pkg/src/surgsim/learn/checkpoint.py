"""Binary checkpoint format.

Layout (all integers little-endian)::

    magic      8 bytes   b"SURGSIMC"
    version    u32       currently 1
    meta_len   u32       length of the UTF-8 JSON metadata that follows
    meta       bytes     {"obs_dim", "act_dim", "hidden", "task", "robots", ...}
    n_arrays   u32
    repeated n_arrays times:
        name_len u16, name (UTF-8), ndim u8, shape u32 * ndim
    body       float64 little-endian arrays, concatenated in header order

Array order: policy parameters in ``state_dict`` order (actor layers,
critic layers, ``log_std``), then ``obs_norm.mean``, ``obs_norm.var`` and
``obs_norm.count`` (shape ``(1,)``).
"""

from __future__ import annotations

import io
import json
import os
import struct
from pathlib import Path

import numpy as np
import torch

from surgsim.learn.policy import ActorCritic, ObsNormalizer

MAGIC = b"SURGSIMC"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | Path, policy: ActorCritic, normalizer: ObsNormalizer | None, meta: dict) -> None:
    """Write atomically: a crash mid-write leaves the previous checkpoint intact."""
    arrays: list[tuple[str, np.ndarray]] = [
        (k, v.detach().to(torch.float64).numpy()) for k, v in policy.state_dict().items()
    ]
    if normalizer is not None:
        arrays += [
            ("obs_norm.mean", normalizer.mean),
            ("obs_norm.var", normalizer.var),
            ("obs_norm.count", np.array([normalizer.count])),
        ]
    meta = {**meta, "obs_dim": policy.obs_dim, "act_dim": policy.act_dim, "hidden": list(policy.hidden)}
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(meta_bytes)))
    buf.write(meta_bytes)
    buf.write(struct.pack("<I", len(arrays)))
    for name, a in arrays:
        nb = name.encode("utf-8")
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<B", a.ndim))
        buf.write(struct.pack(f"<{a.ndim}I", *a.shape))
    for _, a in arrays:
        buf.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(buf.getvalue())
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def read_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, meta_len = struct.unpack_from("<II", raw, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, expected {VERSION}")
    off = 16
    meta = json.loads(raw[off : off + meta_len].decode("utf-8"))
    off += meta_len
    (n,) = struct.unpack_from("<I", raw, off)
    off += 4
    header = []
    for _ in range(n):
        (ln,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off : off + ln].decode("utf-8")
        off += ln
        (ndim,) = struct.unpack_from("<B", raw, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, off)
        off += 4 * ndim
        header.append((name, shape))
    arrays = {}
    for name, shape in header:
        size = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(raw, dtype="<f8", count=size, offset=off).reshape(shape).copy()
        off += 8 * size
    if off != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - off} trailing bytes")
    return meta, arrays


def load_checkpoint(
    path: str | Path, obs_dim: int | None = None, act_dim: int | None = None, dtype=torch.float32
) -> tuple[ActorCritic, ObsNormalizer | None, dict]:
    """Rebuild the policy, checking its shape header against the expected dimensions."""
    meta, arrays = read_checkpoint(path)
    if obs_dim is not None and meta["obs_dim"] != obs_dim:
        raise CheckpointError(f"{path}: checkpoint obs_dim {meta['obs_dim']} does not match environment obs_dim {obs_dim}")
    if act_dim is not None and meta["act_dim"] != act_dim:
        raise CheckpointError(f"{path}: checkpoint act_dim {meta['act_dim']} does not match environment act_dim {act_dim}")
    policy = ActorCritic(meta["obs_dim"], meta["act_dim"], hidden=tuple(meta["hidden"]), dtype=dtype)
    state = policy.state_dict()
    for k in state:
        if k not in arrays or tuple(arrays[k].shape) != tuple(state[k].shape):
            raise CheckpointError(f"{path}: parameter {k} missing or mis-shaped")
        state[k] = torch.as_tensor(arrays[k], dtype=dtype)
    policy.load_state_dict(state)
    normalizer = None
    if "obs_norm.mean" in arrays:
        normalizer = ObsNormalizer(meta["obs_dim"])
        normalizer.mean = arrays["obs_norm.mean"]
        normalizer.var = arrays["obs_norm.var"]
        normalizer.count = float(arrays["obs_norm.count"][0])
    return policy, normalizer, meta
