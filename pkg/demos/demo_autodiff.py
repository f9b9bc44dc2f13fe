"""Walk through the autodiff core: forward ops, backward, gradient checking.

Run:  python3 demos/demo_autodiff.py
"""

import numpy as np

from batchinject.gradcheck import gradcheck
from batchinject.tensor import (
    BnState,
    Tensor,
    backward,
    batch_norm,
    conv2d,
    global_avg_pool,
    linear,
    relu,
    softmax_cross_entropy,
)

rng = np.random.default_rng(0)

print("== a tiny conv -> bn -> relu -> pool -> linear classifier, by hand ==")
x = Tensor(rng.normal(size=(4, 3, 8, 8)))
kernel = Tensor(rng.normal(size=(8, 3, 3, 3), scale=0.3), requires_grad=True)
kbias = Tensor(np.zeros(8), requires_grad=True)
gamma = Tensor(np.ones(8), requires_grad=True)
beta = Tensor(np.zeros(8), requires_grad=True)
w = Tensor(rng.normal(size=(8, 5), scale=0.3), requires_grad=True)
b = Tensor(np.zeros(5), requires_grad=True)
labels = rng.integers(0, 5, size=4)

state = BnState.initial(8, np.float64)
h = relu(batch_norm(conv2d(x, kernel, kbias, padding=1), gamma, beta, state))
logits = linear(global_avg_pool(h), w, b)
loss = softmax_cross_entropy(logits, labels)
print(f"logits shape {logits.shape}, loss {loss.item():.4f}")

backward(loss)
print(f"gradient shapes: kernel {kernel.grad.shape}, gamma {gamma.grad.shape}, w {w.grad.shape}")

print()
print("== the same graph, checked against central finite differences ==")
params = {"kernel": kernel, "kbias": kbias, "gamma": gamma, "beta": beta, "w": w, "b": b}
state2 = BnState.initial(8, np.float64)


def closure():
    hh = relu(
        batch_norm(conv2d(x, kernel, kbias, padding=1), gamma, beta, state2, update_running=False)
    )
    return softmax_cross_entropy(linear(global_avg_pool(hh), w, b), labels)


err = gradcheck(closure, params, eps=1e-5)
print(f"max relative error vs finite differences: {err:.3e} (tolerance 1e-4)")

print()
print("== and what a corrupted backward pass would look like ==")
err_bad = gradcheck(closure, params, eps=1e-5, fault_scale=2.0)
print(f"with gradients deliberately doubled: {err_bad:.3f} (the check catches it)")
