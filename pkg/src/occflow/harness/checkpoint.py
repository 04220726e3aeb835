"""Binary checkpoint container.

Layout: magic line, one JSON header line, then raw little-endian tensor
blobs in header order. The header carries the config snapshot, the output
channel order, optimizer hyper-parameters, epoch and RNG states, so that
save -> load -> save reproduces the same bytes.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import torch

from ..errors import CheckpointError
from ..fusion_net import OUTPUT_FIELDS
from .config import ExperimentConfig, config_from_plain, to_plain

MAGIC = b"OFCKPT1\n"
SCHEMA_VERSION = 1
_DTYPES = {
    torch.float32: "<f4",
    torch.float64: "<f8",
    torch.int64: "<i8",
    torch.uint8: "|u1",
}
_TORCH = {v: k for k, v in _DTYPES.items()}


@dataclass
class Checkpoint:
    config: ExperimentConfig
    model_state: dict
    optimizer_state: dict | None = None
    epoch: int = 0
    rng: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)


def _tensor_bytes(t: torch.Tensor):
    t = t.detach().cpu().contiguous()
    if t.dtype not in _DTYPES:
        raise CheckpointError(f"unsupported tensor dtype {t.dtype}")
    return _DTYPES[t.dtype], list(t.shape), t.numpy().astype(_DTYPES[t.dtype], copy=False).tobytes()


def _plain_group(group: dict) -> dict:
    out = {}
    for k, v in group.items():
        if isinstance(v, tuple):
            v = list(v)
        out[k] = v
    return out


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    blobs, entries = [], []
    offset = 0

    def add(name, tensor):
        nonlocal offset
        dtype, shape, data = _tensor_bytes(tensor)
        entries.append({"name": name, "dtype": dtype, "shape": shape, "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)

    for name, t in ckpt.model_state.items():
        add(f"model/{name}", t)

    optim = None
    if ckpt.optimizer_state is not None:
        state_keys = {}
        for pid, st in sorted(ckpt.optimizer_state["state"].items()):
            keys = []
            for k in sorted(st):
                v = st[k]
                if not torch.is_tensor(v):
                    v = torch.tensor(v, dtype=torch.float32)
                add(f"optim/{pid}/{k}", v)
                keys.append(k)
            state_keys[str(pid)] = keys
        optim = {
            "param_groups": [_plain_group(g) for g in ckpt.optimizer_state["param_groups"]],
            "state_keys": state_keys,
        }

    rng = dict(ckpt.rng)
    if "torch" in rng:
        add("rng/torch", rng.pop("torch"))

    header = {
        "schema_version": SCHEMA_VERSION,
        "config": to_plain(ckpt.config),
        "output_fields": list(OUTPUT_FIELDS),
        "epoch": int(ckpt.epoch),
        "optimizer": optim,
        "rng": rng,
        "extra": ckpt.extra,
        "tensors": entries,
    }
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8") + b"\n")
        for b in blobs:
            f.write(b)


def load_checkpoint(path, expected: ExperimentConfig | None = None) -> Checkpoint:
    try:
        with open(path, "rb") as f:
            if f.read(len(MAGIC)) != MAGIC:
                raise CheckpointError(f"{path}: not a checkpoint file")
            header = json.loads(f.readline().decode("utf-8"))
            data = f.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint header") from exc
    if header.get("schema_version") != SCHEMA_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint schema {header.get('schema_version')!r}")
    if header.get("output_fields") != list(OUTPUT_FIELDS):
        raise CheckpointError(f"{path}: output channel order {header.get('output_fields')} differs from {list(OUTPUT_FIELDS)}")
    config = config_from_plain(header["config"])
    if expected is not None:
        mismatch = [
            k for k, v in expected.architecture().items() if config.architecture()[k] != v
        ]
        if mismatch:
            raise CheckpointError(f"{path}: architecture config differs in sections {mismatch}")

    tensors = {}
    for e in header["tensors"]:
        raw = data[e["offset"] : e["offset"] + e["nbytes"]]
        if len(raw) != e["nbytes"]:
            raise CheckpointError(f"{path}: truncated tensor {e['name']}")
        arr = np.frombuffer(raw, dtype=e["dtype"]).reshape(e["shape"]).copy()
        tensors[e["name"]] = torch.from_numpy(arr).to(_TORCH[e["dtype"]])

    model_state = {k[len("model/"):]: v for k, v in tensors.items() if k.startswith("model/")}
    optimizer_state = None
    if header["optimizer"] is not None:
        state = {}
        for pid, keys in header["optimizer"]["state_keys"].items():
            state[int(pid)] = {k: tensors[f"optim/{pid}/{k}"] for k in keys}
        groups = []
        for g in header["optimizer"]["param_groups"]:
            g = dict(g)
            if "betas" in g:
                g["betas"] = tuple(g["betas"])
            groups.append(g)
        optimizer_state = {"state": state, "param_groups": groups}
    rng = dict(header["rng"])
    if "rng/torch" in tensors:
        rng["torch"] = tensors["rng/torch"]
    return Checkpoint(
        config=config,
        model_state=model_state,
        optimizer_state=optimizer_state,
        epoch=header["epoch"],
        rng=rng,
        extra=header["extra"],
    )
