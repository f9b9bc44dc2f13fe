"""Train a small dual-head network on the synthetic pair, strip, and reload.

Run:  python3 demos/demo_smoke_train.py
"""

import tempfile
from pathlib import Path

import numpy as np

from batchinject import evaluate, load_checkpoint, parameter_census, save_checkpoint, train
from batchinject.config import resolve_config
from batchinject.training import prepare_run_data

cfg = resolve_config({}, {
    "epochs": "6",
    "seed": "1",
    "synth.train_samples": "1024",
    "synth.test_samples": "512",
    "synth.passive_samples": "512",
    "synth.channels": "1",
    "synth.height": "12",
    "synth.width": "12",
    "policy.g": "8",
    "policy.active_batch": "32",
    "policy.passive_batch": "32",
    "model.trunk": "tiny",
    "optim.lr": "0.05",
})

print("== training: one passive batch after every 8 active batches ==")
model, history = train(cfg)
print(f"{'epoch':>5} {'lr':>7} {'act':>4} {'pas':>4} {'loss':>7} {'train':>6} {'test':>6}")
for r in history.epochs:
    print(f"{r.epoch:>5} {r.lr:>7.4f} {r.active_steps:>4} {r.passive_steps:>4} "
          f"{r.train_loss:>7.4f} {r.train_acc:>6.3f} {r.test_acc:>6.3f}")

print()
census = parameter_census(model)
print(f"stripped model: {census['total']} parameters "
      f"(trunk {census['W']}, head {census['MA']}, passive head {census['MP']})")

print()
print("== checkpoint round trip ==")
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "model.ckpt"
    save_checkpoint(path, model)
    loaded = load_checkpoint(path)
    train_ds, test_ds, _ = prepare_run_data(cfg)
    a = evaluate(model, test_ds)
    b = evaluate(loaded, test_ds)
    print(f"accuracy before save {a.accuracy:.4f}, after load {b.accuracy:.4f}")
    x = np.random.default_rng(0).normal(size=(2, 1, 12, 12)).astype(np.float32)
    same = np.array_equal(model.forward(x).data, loaded.forward(x).data)
    print(f"outputs bitwise identical: {same}")
