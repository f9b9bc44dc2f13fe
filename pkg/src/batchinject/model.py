"""Dual-head network: shared convolutional trunk plus per-dataset heads.

Parameters are named ``W/...`` (trunk), ``MA/...`` (active head) and
``MP/...`` (passive head); the name prefix is the partition. The two heads
never appear in the same computation graph, which is what lets one stream's
update leave the other head bitwise untouched.

``strip_passive_head`` drops every ``MP/*`` entry and returns a model whose
forward pass is the dual network's active path, bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, DimensionError
from .rng import named_stream


@dataclass(frozen=True)
class ConvBlock:
    out_channels: int
    kernel: int = 3
    stride: int = 1
    padding: int = 1
    batch_norm: bool = True
    relu: bool = True


@dataclass(frozen=True)
class TrunkSpec:
    """Convolutional trunk: conv blocks followed by global average pooling."""

    in_shape: tuple[int, int, int]  # (C, H, W)
    blocks: tuple[ConvBlock, ...]

    def __post_init__(self):
        if len(self.blocks) == 0:
            raise ConfigurationError("trunk needs at least one conv block")
        self.block_shapes()

    def block_shapes(self) -> list[tuple[int, int, int]]:
        """Output (C, H, W) after each block; raises if any extent collapses."""
        c, h, w = self.in_shape
        if c < 1 or h < 1 or w < 1:
            raise ConfigurationError(f"trunk input shape {self.in_shape} has non-positive extent")
        shapes = []
        for i, blk in enumerate(self.blocks):
            if blk.out_channels < 1 or blk.kernel < 1 or blk.stride < 1 or blk.padding < 0:
                raise ConfigurationError(f"trunk block {i} has invalid geometry: {blk}")
            if blk.kernel > h + 2 * blk.padding or blk.kernel > w + 2 * blk.padding:
                raise ConfigurationError(
                    f"trunk block {i}: kernel {blk.kernel} exceeds padded input {h}x{w}"
                )
            h = (h + 2 * blk.padding - blk.kernel) // blk.stride + 1
            w = (w + 2 * blk.padding - blk.kernel) // blk.stride + 1
            if h < 1 or w < 1:
                raise ConfigurationError(
                    f"trunk block {i} ({blk}) yields non-positive output extent {h}x{w}"
                )
            c = blk.out_channels
            shapes.append((c, h, w))
        return shapes

    @property
    def feature_dim(self) -> int:
        return self.blocks[-1].out_channels


@dataclass(frozen=True)
class HeadSpec:
    """Fully connected classifier head consuming the pooled trunk features."""

    class_count: int
    hidden: tuple[int, ...] = ()

    def __post_init__(self):
        if self.class_count < 2:
            raise ConfigurationError(f"head class_count must be >= 2, got {self.class_count}")
        if any(h < 1 for h in self.hidden):
            raise ConfigurationError(f"head hidden widths must be positive, got {self.hidden}")

    def layer_dims(self, feature_dim: int) -> list[tuple[int, int]]:
        widths = [feature_dim, *self.hidden, self.class_count]
        return list(zip(widths[:-1], widths[1:]))

    def parameter_count(self, feature_dim: int) -> int:
        return sum(din * dout + dout for din, dout in self.layer_dims(feature_dim))


def small_trunk(in_shape=(3, 32, 32)) -> TrunkSpec:
    """Desk-scale default: 4 BN+ReLU conv blocks, stride 2 on blocks 2-4."""
    return TrunkSpec(
        in_shape=tuple(in_shape),
        blocks=(
            ConvBlock(32, 3, 1, 1),
            ConvBlock(64, 3, 2, 1),
            ConvBlock(128, 3, 2, 1),
            ConvBlock(128, 3, 2, 1),
        ),
    )


def tiny_trunk(in_shape=(1, 8, 8)) -> TrunkSpec:
    """Two-block trunk for fast tests."""
    return TrunkSpec(in_shape=tuple(in_shape), blocks=(ConvBlock(8, 3, 1, 1), ConvBlock(16, 3, 2, 1)))


TRUNK_PRESETS = {"small": small_trunk, "tiny": tiny_trunk}


def _he_uniform(stream: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return stream.uniform(-bound, bound, size=shape).astype(dtype)


def _init_trunk_params(spec: TrunkSpec, seed: int, dtype):
    params: dict[str, T.Tensor] = {}
    bn_states: dict[int, T.BnState] = {}
    c_in = spec.in_shape[0]
    for i, blk in enumerate(spec.blocks):
        wname = f"W/block{i}/conv/weight"
        shape = (blk.out_channels, c_in, blk.kernel, blk.kernel)
        fan_in = c_in * blk.kernel * blk.kernel
        params[wname] = T.Tensor(
            _he_uniform(named_stream(seed, "init", wname), shape, fan_in, dtype), requires_grad=True
        )
        params[f"W/block{i}/conv/bias"] = T.Tensor(
            np.zeros(blk.out_channels, dtype=dtype), requires_grad=True
        )
        if blk.batch_norm:
            params[f"W/block{i}/bn/gamma"] = T.Tensor(
                np.ones(blk.out_channels, dtype=dtype), requires_grad=True
            )
            params[f"W/block{i}/bn/beta"] = T.Tensor(
                np.zeros(blk.out_channels, dtype=dtype), requires_grad=True
            )
            bn_states[i] = T.BnState.initial(blk.out_channels, dtype)
        c_in = blk.out_channels
    return params, bn_states


def _init_head_params(prefix: str, spec: HeadSpec, feature_dim: int, seed: int, dtype):
    params: dict[str, T.Tensor] = {}
    for j, (din, dout) in enumerate(spec.layer_dims(feature_dim)):
        wname = f"{prefix}/fc{j}/weight"
        params[wname] = T.Tensor(
            _he_uniform(named_stream(seed, "init", wname), (din, dout), din, dtype),
            requires_grad=True,
        )
        params[f"{prefix}/fc{j}/bias"] = T.Tensor(np.zeros(dout, dtype=dtype), requires_grad=True)
    return params


def _forward_trunk(spec, params, bn_states, x, mode, update_bn):
    if isinstance(x, np.ndarray):
        x = T.Tensor(x)
    if x.data.ndim != 4 or tuple(x.data.shape[1:]) != tuple(spec.in_shape):
        raise DimensionError(
            f"batch shape {x.data.shape} does not match trunk input shape {spec.in_shape}"
        )
    h = x
    for i, blk in enumerate(spec.blocks):
        h = T.conv2d(
            h,
            params[f"W/block{i}/conv/weight"],
            params[f"W/block{i}/conv/bias"],
            stride=blk.stride,
            padding=blk.padding,
        )
        if blk.batch_norm:
            h = T.batch_norm(
                h,
                params[f"W/block{i}/bn/gamma"],
                params[f"W/block{i}/bn/beta"],
                bn_states[i],
                mode=mode,
                update_running=update_bn,
            )
        if blk.relu:
            h = T.relu(h)
    return T.global_avg_pool(h)


def _forward_head(prefix, spec, feature_dim, params, feats):
    h = feats
    n_layers = len(spec.layer_dims(feature_dim))
    for j in range(n_layers):
        h = T.linear(h, params[f"{prefix}/fc{j}/weight"], params[f"{prefix}/fc{j}/bias"])
        if j < n_layers - 1:
            h = T.relu(h)
    return h


def partition_of(name: str) -> str:
    """Partition class ('W', 'MA' or 'MP') a parameter name belongs to."""
    prefix = name.split("/", 1)[0]
    if prefix not in ("W", "MA", "MP"):
        raise ConfigurationError(f"parameter name {name!r} has unknown partition prefix")
    return prefix


class DualHeadNetwork:
    """Shared trunk with an active head and (optionally) a passive head.

    ``passive_spec=None`` builds the single-head baseline network; it is the
    same object a stripped model would load as, just trained directly.
    """

    def __init__(self, trunk_spec, active_spec, passive_spec, params, bn_states):
        self.trunk_spec = trunk_spec
        self.active_spec = active_spec
        self.passive_spec = passive_spec
        self.params = params
        self.bn_states = bn_states

    @property
    def has_passive_head(self) -> bool:
        return self.passive_spec is not None

    def forward_active(self, batch, mode="train", update_bn=None):
        if update_bn is None:
            update_bn = mode == "train"
        feats = _forward_trunk(self.trunk_spec, self.params, self.bn_states, batch, mode, update_bn)
        return _forward_head("MA", self.active_spec, self.trunk_spec.feature_dim, self.params, feats)

    def forward_passive(self, batch, mode="train", update_bn=None):
        if not self.has_passive_head:
            raise ConfigurationError("network was built without a passive head")
        if update_bn is None:
            update_bn = mode == "train"
        feats = _forward_trunk(self.trunk_spec, self.params, self.bn_states, batch, mode, update_bn)
        return _forward_head("MP", self.passive_spec, self.trunk_spec.feature_dim, self.params, feats)

    def partition(self, name: str) -> str:
        return partition_of(name)

    def partition_params(self, *prefixes: str) -> dict[str, T.Tensor]:
        return {n: p for n, p in self.params.items() if partition_of(n) in prefixes}

    def strip_passive_head(self) -> "StrippedModel":
        params = {n: T.Tensor(p.data.copy(), requires_grad=True)
                  for n, p in self.params.items() if partition_of(n) != "MP"}
        bn_states = {i: s.copy() for i, s in self.bn_states.items()}
        return StrippedModel(self.trunk_spec, self.active_spec, params, bn_states)


class StrippedModel:
    """Trunk plus active head only: the final deliverable of a run."""

    def __init__(self, trunk_spec, active_spec, params, bn_states):
        for name in params:
            if partition_of(name) == "MP":
                raise ConfigurationError(f"stripped model cannot hold passive parameter {name!r}")
        self.trunk_spec = trunk_spec
        self.active_spec = active_spec
        self.params = params
        self.bn_states = bn_states

    def forward(self, batch, mode="eval", update_bn=None):
        if update_bn is None:
            update_bn = mode == "train"
        feats = _forward_trunk(self.trunk_spec, self.params, self.bn_states, batch, mode, update_bn)
        return _forward_head("MA", self.active_spec, self.trunk_spec.feature_dim, self.params, feats)

    forward_active = forward


def build_network(
    trunk: TrunkSpec,
    active: HeadSpec,
    passive: HeadSpec | None,
    init_seed: int,
    dtype=np.float32,
) -> DualHeadNetwork:
    """Initialize a network from named per-parameter random streams.

    Conv and linear weights are He-uniform, biases zero, BN gamma 1 / beta 0.
    Each weight draws from a stream keyed by (seed, parameter name), so the
    presence of one head never changes how any other parameter initializes.
    """
    params, bn_states = _init_trunk_params(trunk, init_seed, dtype)
    params.update(_init_head_params("MA", active, trunk.feature_dim, init_seed, dtype))
    if passive is not None:
        params.update(_init_head_params("MP", passive, trunk.feature_dim, init_seed, dtype))
    return DualHeadNetwork(trunk, active, passive, params, bn_states)


def parameter_census(model) -> dict[str, int]:
    """Exact scalar counts per partition class plus the total."""
    counts = {"W": 0, "MA": 0, "MP": 0}
    for name, p in model.params.items():
        counts[partition_of(name)] += p.data.size
    counts["total"] = counts["W"] + counts["MA"] + counts["MP"]
    return counts
