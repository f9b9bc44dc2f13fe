"""Minimal reverse-mode automatic differentiation on numpy arrays.

The op surface is exactly what the dual-head networks need: ``linear``,
``conv2d``, ``relu``, ``batch_norm``, ``global_avg_pool``,
``softmax_cross_entropy``, plus ``sum_all`` and ``scale`` for tests. Each op
returns a new :class:`Tensor`; when autograd is enabled and any input requires
gradients, the output carries a graph node whose backward closure produces the
input gradients. ``backward(loss)`` walks the recorded graph once in reverse
topological order.

Training runs in single precision; gradient-check paths build the same graphs
in double precision (ops preserve the dtype of their inputs).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError, NonFiniteError

_autograd_enabled = True


class no_grad:
    """Context manager that suspends graph recording (evaluation paths)."""

    def __enter__(self):
        global _autograd_enabled
        self._prev = _autograd_enabled
        _autograd_enabled = False
        return self

    def __exit__(self, *exc):
        global _autograd_enabled
        _autograd_enabled = self._prev
        return False


class _Node:
    """One recorded operation: parents plus a closure producing their grads."""

    __slots__ = ("op", "parents", "backward_fn")

    def __init__(self, op, parents, backward_fn):
        self.op = op
        self.parents = parents
        self.backward_fn = backward_fn


class Tensor:
    """An n-d float array with an optional gradient slot and graph node."""

    __slots__ = ("data", "grad", "requires_grad", "node")

    def __init__(self, data, requires_grad: bool = False, node: _Node | None = None):
        if isinstance(data, np.ndarray):
            if data.dtype not in (np.float32, np.float64):
                data = data.astype(np.float32)
        else:
            data = np.asarray(data, dtype=np.float32)
        self.data = data
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node = node

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(()))

    def validate_finite(self, what: str = "tensor") -> "Tensor":
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteError(f"{what} contains NaN or Inf values")
        return self

    def backward(self) -> None:
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def _result(out_data, parents, backward_fn, op):
    if _autograd_enabled and any(p.requires_grad for p in parents):
        return Tensor(out_data, requires_grad=True, node=_Node(op, parents, backward_fn))
    return Tensor(out_data)


def topo_order(root: Tensor) -> list[Tensor]:
    """Tensors reachable from ``root``, parents before consumers."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for p in t.node.parents:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires-grad tensor reachable from ``loss``.

    Gradients accumulate into pre-existing ``grad`` arrays; parameters not on
    the recorded graph are left untouched. ``loss`` must be scalar.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward expects a scalar loss, got shape {loss.data.shape}")
    order = topo_order(loss)
    flows: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for t in reversed(order):
        flow = flows.pop(id(t), None)
        if flow is None:
            continue
        if t.requires_grad:
            t.grad = flow if t.grad is None else t.grad + flow
        if t.node is None:
            continue
        grads = t.node.backward_fn(flow)
        for parent, g in zip(t.node.parents, grads):
            if g is None:
                continue
            acc = flows.get(id(parent))
            flows[id(parent)] = g if acc is None else acc + g


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map: out[i, j] = sum_k x[i, k] * w[k, j] + b[j]."""
    xd, wd, bd = x.data, w.data, b.data
    if xd.ndim != 2 or wd.ndim != 2 or xd.shape[1] != wd.shape[0]:
        raise DimensionError(
            f"linear: input shape {xd.shape} does not conform with weight shape {wd.shape}"
        )
    if bd.shape != (wd.shape[1],):
        raise DimensionError(
            f"linear: bias shape {bd.shape} does not match weight shape {wd.shape}"
        )
    out = xd @ wd + bd

    def backward_fn(dout):
        dx = dout @ wd.T if x.requires_grad else None
        dw = xd.T @ dout if w.requires_grad else None
        db = dout.sum(axis=0) if b.requires_grad else None
        return dx, dw, db

    return _result(out, (x, w, b), backward_fn, "linear")


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    B, C = xp.shape[:2]
    cols = np.empty((B, C, kh, kw, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
    return cols


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation with zero padding, computed through im2col + GEMM.

    Output extents are floor((H + 2*padding - kh) / stride) + 1 and likewise
    for width. The direct-loop reference lives in :mod:`batchinject.reference`
    and the two implementations are held to 1e-5 relative agreement in tests.
    """
    xd, wd, bd = x.data, w.data, b.data
    if xd.ndim != 4 or wd.ndim != 4:
        raise DimensionError(
            f"conv2d: need 4-d input and kernel, got input shape {xd.shape}, kernel shape {wd.shape}"
        )
    B, C, H, W = xd.shape
    K, Ck, kh, kw = wd.shape
    if Ck != C:
        raise DimensionError(
            f"conv2d: input shape {xd.shape} has {C} channels but kernel shape {wd.shape} expects {Ck}"
        )
    if bd.shape != (K,):
        raise DimensionError(f"conv2d: bias shape {bd.shape} does not match kernel shape {wd.shape}")
    if stride < 1:
        raise ConfigurationError(f"conv2d: stride must be >= 1, got {stride}")
    if padding < 0:
        raise ConfigurationError(f"conv2d: padding must be >= 0, got {padding}")
    ho = (H + 2 * padding - kh) // stride + 1
    wo = (W + 2 * padding - kw) // stride + 1
    if kh > H + 2 * padding or kw > W + 2 * padding or ho <= 0 or wo <= 0:
        raise ConfigurationError(
            f"conv2d: kernel {kh}x{kw}, stride {stride}, padding {padding} "
            f"yields non-positive output extent for input {H}x{W}"
        )
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    out = np.tensordot(cols, wd, axes=((1, 2, 3), (1, 2, 3)))  # (B, ho, wo, K)
    out = np.moveaxis(out, 3, 1) + bd[None, :, None, None]

    def backward_fn(dout):
        dw = np.tensordot(dout, cols, axes=((0, 2, 3), (0, 4, 5))) if w.requires_grad else None
        db = dout.sum(axis=(0, 2, 3)) if b.requires_grad else None
        dx = None
        if x.requires_grad:
            dcols = np.tensordot(dout, wd, axes=(1, 0))  # (B, ho, wo, C, kh, kw)
            dcols = np.moveaxis(dcols, (3, 4, 5), (1, 2, 3))
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[
                        :, :, i, j
                    ]
            dx = dxp[:, :, padding : padding + H, padding : padding + W] if padding else dxp
        return dx, dw, db

    return _result(out, (x, w, b), backward_fn, "conv2d")


def relu(x: Tensor) -> Tensor:
    """Elementwise max(0, x); the subgradient at exactly 0 is 0."""
    xd = x.data
    out = np.maximum(xd, 0)
    mask = xd > 0

    def backward_fn(dout):
        return (dout * mask,)

    return _result(out, (x,), backward_fn, "relu")


@dataclass
class BnState:
    """Per-channel running statistics owned by one batch-norm layer."""

    mean: np.ndarray
    var: np.ndarray

    @classmethod
    def initial(cls, channels: int, dtype=np.float32) -> "BnState":
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype))

    def copy(self) -> "BnState":
        return BnState(self.mean.copy(), self.var.copy())


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    state: BnState,
    mode: str = "train",
    momentum: float = 0.1,
    eps: float = 1e-5,
    update_running: bool | None = None,
) -> Tensor:
    """Batch normalization over the channel axis of (B, C) or (B, C, H, W).

    Train mode normalizes with biased batch statistics and, unless
    ``update_running`` is False, folds them into the running estimates as
    running = (1 - momentum) * running + momentum * batch. Eval mode uses the
    running statistics as constants.
    """
    if mode not in ("train", "eval"):
        raise ConfigurationError(f"batch_norm: mode must be 'train' or 'eval', got {mode!r}")
    xd = x.data
    if xd.ndim == 2:
        axes, bshape = (0,), (1, -1)
    elif xd.ndim == 4:
        axes, bshape = (0, 2, 3), (1, -1, 1, 1)
    else:
        raise DimensionError(f"batch_norm: need a 2-d or 4-d input, got shape {xd.shape}")
    C = xd.shape[1]
    if gamma.data.shape != (C,) or beta.data.shape != (C,):
        raise DimensionError(
            f"batch_norm: gamma shape {gamma.data.shape} / beta shape {beta.data.shape} "
            f"do not match input shape {xd.shape}"
        )
    if update_running is None:
        update_running = mode == "train"

    gamma_b = gamma.data.reshape(bshape)
    if mode == "train":
        if xd.shape[0] < 2:
            raise ConfigurationError(
                f"batch_norm: train mode needs a batch of at least 2, got {xd.shape[0]}"
            )
        mu = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        if update_running:
            state.mean[...] = (1.0 - momentum) * state.mean + momentum * mu
            state.var[...] = (1.0 - momentum) * state.var + momentum * var
    else:
        mu = state.mean.astype(xd.dtype, copy=False)
        var = state.var.astype(xd.dtype, copy=False)
    inv_std = 1.0 / np.sqrt(var + eps)
    inv_std_b = inv_std.reshape(bshape)
    xhat = (xd - mu.reshape(bshape)) * inv_std_b
    out = gamma_b * xhat + beta.data.reshape(bshape)

    if mode == "train":

        def backward_fn(dout):
            dgamma = (dout * xhat).sum(axis=axes) if gamma.requires_grad else None
            dbeta = dout.sum(axis=axes) if beta.requires_grad else None
            dx = None
            if x.requires_grad:
                dxhat = dout * gamma_b
                dx = inv_std_b * (
                    dxhat
                    - dxhat.mean(axis=axes, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=axes, keepdims=True)
                )
            return dx, dgamma, dbeta

    else:

        def backward_fn(dout):
            dgamma = (dout * xhat).sum(axis=axes) if gamma.requires_grad else None
            dbeta = dout.sum(axis=axes) if beta.requires_grad else None
            dx = dout * gamma_b * inv_std_b if x.requires_grad else None
            return dx, dgamma, dbeta

    return _result(out, (x, gamma, beta), backward_fn, "batch_norm")


def global_avg_pool(x: Tensor) -> Tensor:
    """Spatial mean: (B, C, H, W) -> (B, C)."""
    xd = x.data
    if xd.ndim != 4:
        raise DimensionError(f"global_avg_pool: need a 4-d input, got shape {xd.shape}")
    H, W = xd.shape[2:]
    out = xd.mean(axis=(2, 3))

    def backward_fn(dout):
        dx = np.broadcast_to((dout / (H * W))[:, :, None, None], xd.shape)
        return (dx,)

    return _result(out, (x,), backward_fn, "global_avg_pool")


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log softmax probability of the true class.

    Computed with max subtraction, so adding a constant to every logit of a
    row leaves the loss unchanged up to rounding.
    """
    ld = logits.data
    if ld.ndim != 2:
        raise DimensionError(f"softmax_cross_entropy: need 2-d logits, got shape {ld.shape}")
    labels = np.asarray(labels)
    B, K = ld.shape
    if labels.shape != (B,):
        raise DimensionError(
            f"softmax_cross_entropy: labels shape {labels.shape} does not match logits shape {ld.shape}"
        )
    if labels.size and (labels.min() < 0 or labels.max() >= K):
        bad = labels[(labels < 0) | (labels >= K)][0]
        raise IndexError(f"softmax_cross_entropy: label {bad} out of range [0, {K})")
    z = ld - ld.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    rows = np.arange(B)
    out = np.asarray(-logp[rows, labels].mean(), dtype=ld.dtype)

    def backward_fn(dout):
        if not logits.requires_grad:
            return (None,)
        p = np.exp(logp)
        p[rows, labels] -= 1.0
        return (p * (dout / B),)

    return _result(out, (logits,), backward_fn, "softmax_cross_entropy")


def sum_all(x: Tensor) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    out = np.asarray(x.data.sum(), dtype=x.data.dtype)

    def backward_fn(dout):
        return (np.broadcast_to(dout, x.data.shape),)

    return _result(out, (x,), backward_fn, "sum_all")


def scale(x: Tensor, a: float) -> Tensor:
    """Multiply by a python scalar."""
    a = x.data.dtype.type(a)
    out = x.data * a

    def backward_fn(dout):
        return (dout * a,)

    return _result(out, (x,), backward_fn, "scale")
