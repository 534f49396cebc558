"""Config JSON serialization, presets, and the binary weight checkpoint."""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import ConfigError
from .layers import (BlockResidualMode, BlockResidualSpec, ModuleKind,
                     ModuleSpec, NetworkConfig)

CHECKPOINT_MAGIC = b"BIDRNW01"

_KINDS = {k.value for k in ModuleKind}
_BR_MODES = {m.value for m in BlockResidualMode}


def config_to_dict(cfg: NetworkConfig) -> dict:
    blocks = []
    for spec, br in cfg.blocks:
        entry = {
            "kind": spec.kind.value,
            "in_channels": spec.in_channels,
            "out_channels": spec.out_channels,
            "stride": spec.spatial_stride,
            "block_residual": br.mode.value,
        }
        if spec.kind is ModuleKind.DOWN_SAMPLE and spec.branches != 2:
            entry["branches"] = spec.branches
        blocks.append(entry)
    return {
        "input_shape": list(cfg.input_shape),
        "preact": cfg.preact,
        "blocks": blocks,
        "seed": cfg.seed,
        "head": {"out_features": cfg.head_out},
    }


def config_from_dict(doc: dict) -> NetworkConfig:
    try:
        input_shape = tuple(int(v) for v in doc["input_shape"])
        preact = doc.get("preact", "hardtanh")
        seed = int(doc.get("seed", 0))
        head_out = int(doc.get("head", {}).get("out_features", 14))
        blocks = []
        for i, entry in enumerate(doc["blocks"]):
            kind = entry["kind"]
            if kind not in _KINDS:
                raise ConfigError(f"blocks[{i}].kind: unknown kind {kind!r}")
            br = entry.get("block_residual", "none")
            if br not in _BR_MODES:
                raise ConfigError(f"blocks[{i}].block_residual: unknown mode {br!r}")
            spec = ModuleSpec(
                kind=ModuleKind(kind),
                in_channels=int(entry["in_channels"]),
                out_channels=int(entry["out_channels"]),
                spatial_stride=int(entry.get("stride", 1)),
                branches=int(entry.get("branches", 2)),
            )
            blocks.append((spec, BlockResidualSpec(BlockResidualMode(br))))
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"malformed config: {e}") from None
    cfg = NetworkConfig(input_shape=input_shape, blocks=blocks, preact=preact,
                        seed=seed, head_out=head_out)
    cfg.validate()
    return cfg


def load_config(path: str) -> NetworkConfig:
    try:
        with open(path) as f:
            doc = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}:{e.colno}: invalid JSON: {e.msg}") from None
    return config_from_dict(doc)


def save_config(cfg: NetworkConfig, path: str):
    with open(path, "w") as f:
        json.dump(config_to_dict(cfg), f, indent=2)
        f.write("\n")


def _block(kind, ci, co, stride=1, br="fp1x1", branches=2):
    return {"kind": kind, "in_channels": ci, "out_channels": co, "stride": stride,
            "block_residual": br, **({"branches": branches} if branches != 2 else {})}


def preset_config(name: str) -> NetworkConfig:
    """Named starter configs; table4a-step-N mirrors the cumulative module
    progression (base LCR, +down scale, +fusion up, +fusion down, +down sample)."""
    if name == "base-lcr":
        doc = {
            "input_shape": [3, 32, 32],
            "preact": "hardtanh",
            "seed": 0,
            "head": {"out_features": 14},
            "blocks": [_block("fusion_up", 3, 6, br="none")] +
                      [_block("base_lcr", 6, 6, br="none") for _ in range(3)],
        }
    elif name == "full-bidrb":
        doc = {
            "input_shape": [3, 32, 32],
            "preact": "hardtanh",
            "seed": 0,
            "head": {"out_features": 14},
            "blocks": [
                _block("fusion_up", 3, 6),
                _block("down_scale", 6, 6, stride=2),
                _block("fusion_down", 6, 3),
                _block("down_sample", 3, 6, stride=2),
                _block("base_lcr", 6, 6, br="none"),
            ],
        }
    elif name.startswith("table4a-step-"):
        try:
            step = int(name.rsplit("-", 1)[1])
        except ValueError:
            raise ConfigError(f"unknown preset {name!r}") from None
        if not 1 <= step <= 5:
            raise ConfigError("table4a steps run 1 through 5")
        # Fixed five-slot scaffold; later steps swap plain LCR slots for the
        # dimension-matching variants in order.
        slots = [
            _block("fusion_up", 3, 6, br="none"),
            _block("base_lcr", 6, 6, br="none"),
            _block("base_lcr", 6, 6, br="none"),
            _block("base_lcr", 6, 6, br="none"),
            _block("base_lcr", 6, 6, br="none"),
        ]
        if step >= 2:
            slots[1] = _block("down_scale", 6, 6, stride=2, br="none")
        if step >= 3:
            slots[2] = _block("fusion_up", 6, 12, br="none")
            slots[3] = _block("base_lcr", 12, 12, br="none")
            slots[4] = _block("base_lcr", 12, 12, br="none")
        if step >= 4:
            slots[3] = _block("fusion_down", 12, 6, br="none")
            slots[4] = _block("base_lcr", 6, 6, br="none")
        if step >= 5:
            slots[4] = _block("down_sample", 6, 12, stride=2, br="none")
        doc = {
            "input_shape": [3, 32, 32],
            "preact": "hardtanh",
            "seed": 0,
            "head": {"out_features": 14},
            "blocks": slots,
        }
    else:
        raise ConfigError(
            f"unknown preset {name!r}; expected base-lcr, full-bidrb, or table4a-step-N"
        )
    return config_from_dict(doc)


def save_checkpoint(path: str, arrays: dict):
    """Little-endian weight file: 8-byte magic, then per-array records of
    (u32 name length, name bytes, u32 rank, u32 extents..., float32 data)."""
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        for name, arr in arrays.items():
            arr = np.asarray(arr, dtype="<f4")
            name_b = name.encode("utf-8")
            f.write(struct.pack("<I", len(name_b)))
            f.write(name_b)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_checkpoint(path: str) -> dict:
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != CHECKPOINT_MAGIC:
            raise ConfigError(f"{path}: bad checkpoint magic {magic!r}")
        arrays = {}
        while True:
            head = f.read(4)
            if not head:
                break
            (name_len,) = struct.unpack("<I", head)
            name = f.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", f.read(4))
            shape = struct.unpack(f"<{rank}I", f.read(4 * rank))
            count = int(np.prod(shape)) if rank else 1
            data = np.frombuffer(f.read(4 * count), dtype="<f4").reshape(shape)
            arrays[name] = data.copy()
    return arrays


def network_state(net) -> dict:
    state = {name: p.data for name, p in net.named_parameters().items()}
    state.update(net.named_buffers())
    return state


def load_network_state(net, arrays: dict):
    params = net.named_parameters()
    buffers = net.named_buffers()
    for name, arr in arrays.items():
        if name in params:
            if params[name].data.shape != arr.shape:
                raise ConfigError(
                    f"checkpoint {name}: shape {arr.shape} does not match "
                    f"{params[name].data.shape}"
                )
            params[name].data[...] = arr
        elif name in buffers:
            buffers[name][...] = arr
        else:
            raise ConfigError(f"checkpoint has unknown entry {name!r}")
