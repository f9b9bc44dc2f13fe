"""Central-finite-difference verification of analytic gradients.

The closure rebuilds the loss from scratch on every call (including any batch
norm state handling), in double precision. The checker compares each sampled
analytic gradient coordinate against (f(p + eps) - f(p - eps)) / (2 eps).
"""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .errors import GradientCheckError
from .tensor import Tensor, backward

REL_ERROR_FLOOR = 1e-12


def gradcheck(
    model_closure: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    eps: float = 1e-5,
    max_coords_per_param: int = 50,
    sample_seed: int = 0,
    fault_scale: float = 1.0,
) -> float:
    """Return the max relative error between analytic and numeric gradients.

    ``model_closure`` must be deterministic: it is evaluated twice up front and
    a mismatch raises :class:`GradientCheckError`. ``fault_scale`` multiplies
    the analytic gradients and exists so callers can prove the check catches a
    corrupted backward pass.

    The relative error per coordinate is
    |analytic - central_diff| / max(|analytic|, |central_diff|, 1e-12).
    """
    first = model_closure()
    second = model_closure()
    if first.data.size != 1:
        raise GradientCheckError(f"closure must return a scalar loss, got shape {first.data.shape}")
    if not np.array_equal(first.data, second.data):
        raise GradientCheckError(
            f"closure is not deterministic: {first.item()!r} != {second.item()!r}"
        )

    for p in params.values():
        p.grad = None
    loss = model_closure()
    backward(loss)
    analytic = {}
    for name, p in params.items():
        if p.grad is None:
            raise GradientCheckError(f"parameter {name!r} received no gradient")
        analytic[name] = p.grad * fault_scale
        p.grad = None

    rng = np.random.default_rng(sample_seed)
    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n = flat.size
        coords = np.arange(n) if n <= max_coords_per_param else rng.choice(
            n, size=max_coords_per_param, replace=False
        )
        grad_flat = analytic[name].reshape(-1)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            plus = model_closure().item()
            flat[c] = orig - eps
            minus = model_closure().item()
            flat[c] = orig
            numeric = (plus - minus) / (2.0 * eps)
            a = float(grad_flat[c])
            err = abs(a - numeric) / max(abs(a), abs(numeric), REL_ERROR_FLOOR)
            worst = max(worst, err)
    return worst
