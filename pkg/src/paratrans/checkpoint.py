"""Versioned binary checkpoints: a JSON header plus raw little-endian float64
arrays in manifest order. Saves are byte-deterministic, so save -> load ->
save reproduces the file exactly and checkpoints diff cleanly.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .model import ModelConfig, ModelParams, init_params
from .optim import OptimizerState
from .tensor import Tensor

__all__ = ["save_checkpoint", "load_checkpoint", "CheckpointError"]

MAGIC = b"PTCKPT01"
FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(
    path: str | Path,
    params: ModelParams,
    opt_state: OptimizerState | None,
    global_step: int,
    config_hash: str,
    vocab_tokens: list[str],
    extra: dict | None = None,
) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cfg = params.config
    manifest: list[tuple[str, list[int]]] = []
    arrays: list[np.ndarray] = []
    for name, t in params.items():
        manifest.append((f"p.{name}", list(t.shape)))
        arrays.append(t.data)
    if opt_state is not None:
        for name in params.names():
            for slot, store in (("m", opt_state.m), ("v", opt_state.v)):
                arr = store.get(name)
                if arr is None:
                    arr = np.zeros_like(params[name].data)
                manifest.append((f"{slot}.{name}", list(arr.shape)))
                arrays.append(arr)

    header = {
        "version": FORMAT_VERSION,
        "config_hash": config_hash,
        "global_step": int(global_step),
        "model": {
            "d_model": cfg.d_model,
            "d_hidden": cfg.d_hidden,
            "n_layer": cfg.n_layer,
            "n_head": cfg.n_head,
            "vocab_size": cfg.vocab_size,
            "max_len": cfg.max_len,
            "dropout": cfg.dropout,
            "label_smoothing": cfg.label_smoothing,
        },
        "optimizer": None
        if opt_state is None
        else {
            "step": opt_state.step,
            "d_model": opt_state.d_model,
            "warmup_steps": opt_state.warmup_steps,
            "beta1": opt_state.beta1,
            "beta2": opt_state.beta2,
            "epsilon": opt_state.epsilon,
            "lr_scale": opt_state.lr_scale,
        },
        "vocab": list(vocab_tokens),
        "arrays": manifest,
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for arr in arrays:
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path):
    """-> (ModelParams, OptimizerState | None, header dict)."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint {path} not found")
    raw = path.read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    (hlen,) = struct.unpack("<Q", raw[len(MAGIC) : len(MAGIC) + 8])
    header = json.loads(raw[len(MAGIC) + 8 : len(MAGIC) + 8 + hlen].decode())
    if header.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {header.get('version')}")

    offset = len(MAGIC) + 8 + hlen
    loaded: dict[str, np.ndarray] = {}
    for name, shape in header["arrays"]:
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape)
        loaded[name] = arr.astype(np.float64)
        offset += count * 8
    if offset != len(raw):
        raise CheckpointError(f"{path}: trailing bytes ({len(raw) - offset})")

    mc = header["model"]
    cfg = ModelConfig(**mc)
    params = init_params(cfg, seed=0)
    for name in params.names():
        key = f"p.{name}"
        if key not in loaded:
            raise CheckpointError(f"{path}: missing array {key}")
        if tuple(loaded[key].shape) != params[name].shape:
            raise CheckpointError(f"{path}: shape mismatch for {key}")
        params.tensors[name] = Tensor(loaded[key])

    opt_state = None
    if header["optimizer"] is not None:
        oh = header["optimizer"]
        opt_state = OptimizerState(
            d_model=oh["d_model"],
            warmup_steps=oh["warmup_steps"],
            beta1=oh["beta1"],
            beta2=oh["beta2"],
            epsilon=oh["epsilon"],
            lr_scale=oh["lr_scale"],
            step=oh["step"],
        )
        for name in params.names():
            opt_state.m[name] = loaded[f"m.{name}"].copy()
            opt_state.v[name] = loaded[f"v.{name}"].copy()
    return params, opt_state, header
