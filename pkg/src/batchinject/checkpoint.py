"""Binary checkpoint container.

Layout (all integers little-endian):

    bytes 0..7    magic ``b"BINJCKP1"``
    bytes 8..15   uint64 header length ``n``
    next n bytes  UTF-8 JSON header
    remainder     raw tensor data, little-endian scalars, in header order

The header carries the format version, the model kind (``dual`` or
``stripped``), an echo of the trunk/head specs, the tensor table
(name/shape/dtype, including BN running statistics as ``.../bn/running_mean``
and ``.../bn/running_var``), and the final RNG stream states of the run.
Stripped checkpoints contain no ``MP/*`` entries.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import DataFormatError
from .model import ConvBlock, DualHeadNetwork, HeadSpec, StrippedModel, TrunkSpec
from .tensor import BnState, Tensor

MAGIC = b"BINJCKP1"
FORMAT_VERSION = 1

_DTYPES = {"float32": "<f4", "float64": "<f8"}


def _spec_to_json(trunk: TrunkSpec, head: HeadSpec | None):
    if head is None:
        return None
    return {"class_count": head.class_count, "hidden": list(head.hidden)}


def _trunk_to_json(trunk: TrunkSpec):
    return {
        "in_shape": list(trunk.in_shape),
        "blocks": [
            [b.out_channels, b.kernel, b.stride, b.padding, b.batch_norm, b.relu]
            for b in trunk.blocks
        ],
    }


def _trunk_from_json(obj) -> TrunkSpec:
    blocks = tuple(ConvBlock(o, k, s, p, bool(bn), bool(rl)) for o, k, s, p, bn, rl in obj["blocks"])
    return TrunkSpec(in_shape=tuple(obj["in_shape"]), blocks=blocks)


def _head_from_json(obj) -> HeadSpec | None:
    if obj is None:
        return None
    return HeadSpec(class_count=obj["class_count"], hidden=tuple(obj["hidden"]))


def _named_arrays(model) -> list[tuple[str, np.ndarray]]:
    arrays = [(name, p.data) for name, p in model.params.items()]
    for i in sorted(model.bn_states):
        arrays.append((f"W/block{i}/bn/running_mean", model.bn_states[i].mean))
        arrays.append((f"W/block{i}/bn/running_var", model.bn_states[i].var))
    return arrays


def save_checkpoint(path, model, rng_states: dict | None = None) -> None:
    """Write a dual or stripped model to ``path``."""
    kind = "stripped" if isinstance(model, StrippedModel) else "dual"
    arrays = _named_arrays(model)
    table = []
    for name, arr in arrays:
        dtype = str(arr.dtype)
        if dtype not in _DTYPES:
            raise DataFormatError(f"checkpoint cannot store dtype {dtype} (tensor {name!r})")
        table.append({"name": name, "shape": list(arr.shape), "dtype": dtype})
    header = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "trunk": _trunk_to_json(model.trunk_spec),
        "active_head": _spec_to_json(model.trunk_spec, model.active_spec),
        "passive_head": _spec_to_json(model.trunk_spec, getattr(model, "passive_spec", None)),
        "tensors": table,
        "rng_states": rng_states or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        for name, arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype=_DTYPES[str(arr.dtype)]).tobytes())


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise DataFormatError(f"{path}: bad checkpoint magic {magic!r}")
        n = int.from_bytes(fh.read(8), "little")
        try:
            return json.loads(fh.read(n).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise DataFormatError(f"{path}: corrupt checkpoint header: {exc}") from exc


def load_checkpoint(path):
    """Read a checkpoint back into a :class:`DualHeadNetwork` or :class:`StrippedModel`."""
    path = Path(path)
    header = read_header(path)
    if header.get("format_version") != FORMAT_VERSION:
        raise DataFormatError(
            f"{path}: unsupported checkpoint format version {header.get('format_version')!r}"
        )
    offset = 16 + len(json.dumps(header, sort_keys=True).encode("utf-8"))
    raw = path.read_bytes()
    params: dict[str, Tensor] = {}
    running: dict[str, np.ndarray] = {}
    pos = offset
    for entry in header["tensors"]:
        name, shape, dtype = entry["name"], tuple(entry["shape"]), entry["dtype"]
        if dtype not in _DTYPES:
            raise DataFormatError(f"{path}: tensor {name!r} has unsupported dtype {dtype!r}")
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * np.dtype(_DTYPES[dtype]).itemsize
        if pos + nbytes > len(raw):
            raise DataFormatError(f"{path}: truncated checkpoint at tensor {name!r}")
        arr = np.frombuffer(raw, dtype=_DTYPES[dtype], count=count, offset=pos).reshape(shape)
        arr = arr.astype(dtype, copy=True)
        pos += nbytes
        if name.endswith("/running_mean") or name.endswith("/running_var"):
            running[name] = arr
        else:
            params[name] = Tensor(arr, requires_grad=True)
    if pos != len(raw):
        raise DataFormatError(f"{path}: {len(raw) - pos} trailing bytes after tensor data")

    trunk = _trunk_from_json(header["trunk"])
    active = _head_from_json(header["active_head"])
    passive = _head_from_json(header["passive_head"])
    bn_states: dict[int, BnState] = {}
    for i, blk in enumerate(trunk.blocks):
        if blk.batch_norm:
            try:
                bn_states[i] = BnState(
                    running[f"W/block{i}/bn/running_mean"], running[f"W/block{i}/bn/running_var"]
                )
            except KeyError as exc:
                raise DataFormatError(f"{path}: missing BN running stats for block {i}") from exc
    if header["kind"] == "stripped":
        return StrippedModel(trunk, active, params, bn_states)
    return DualHeadNetwork(trunk, active, passive, params, bn_states)
