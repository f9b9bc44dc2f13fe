"""The injection training loop.

Each epoch runs one shuffled pass over the active dataset; after every g-th
active mini-batch (1-based, counter reset per epoch) one passive mini-batch is
trained. Active steps update trunk + active head, passive steps update trunk +
passive head; the parameters (and momentum buffers) of whichever head is not
in the stepped subset stay bitwise unchanged. g = inf disables injection
entirely, which reduces the loop to plain single-head training.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

from .data import (
    ActiveIterator,
    PassiveIterator,
    adapt_dataset,
    channel_stats,
    prepare_batch,
    take_fraction,
)
from .errors import ConfigurationError, DivergedRunError
from .metrics import evaluate
from .model import HeadSpec, build_network
from .optim import SgdState, lr_at, sgd_step
from .rng import named_stream
from .tensor import backward, softmax_cross_entropy

ACTIVE = "A"
PASSIVE = "P"
DIVERGENCE_THRESHOLD = 1e4
HISTORY_FIELDS = (
    "epoch",
    "lr",
    "active_steps",
    "passive_steps",
    "train_loss",
    "train_acc",
    "test_acc",
)
HISTORY_VERSION = 1


def _valid_g(g) -> bool:
    if g == math.inf:
        return True
    return isinstance(g, int) and not isinstance(g, bool) and g >= 1


@dataclass(frozen=True)
class InjectionPolicy:
    """How often and how large the passive injections are.

    ``g`` is the number of active mini-batches per injected passive
    mini-batch; ``math.inf`` means no injection (baseline).
    """

    g: int | float = 100
    active_batch_size: int = 128
    passive_batch_size: int = 128
    update_bn_on_passive: bool = True

    def __post_init__(self):
        if not _valid_g(self.g):
            raise ConfigurationError(f"policy.g must be an integer >= 1 or inf, got {self.g!r}")
        if self.active_batch_size < 1 or self.passive_batch_size < 1:
            raise ConfigurationError(
                f"batch sizes must be >= 1, got {self.active_batch_size}/{self.passive_batch_size}"
            )

    @property
    def injecting(self) -> bool:
        return self.g != math.inf


@dataclass(frozen=True)
class StepPlan:
    """Deterministic per-epoch interleaving of active and passive steps."""

    steps: tuple[tuple[str, int], ...]

    @property
    def active_count(self) -> int:
        return sum(1 for tag, _ in self.steps if tag == ACTIVE)

    @property
    def passive_count(self) -> int:
        return sum(1 for tag, _ in self.steps if tag == PASSIVE)


def plan_epoch(num_active_batches: int, g) -> StepPlan:
    """Tag sequence for one epoch: passive after every active step whose
    1-based index is divisible by g. No randomness."""
    if num_active_batches < 1:
        raise ConfigurationError(f"need at least one active batch, got {num_active_batches}")
    if not _valid_g(g):
        raise ConfigurationError(f"g must be an integer >= 1 or inf, got {g!r}")
    steps = []
    j = 0
    for i in range(1, num_active_batches + 1):
        steps.append((ACTIVE, i))
        if i % g == 0:
            j += 1
            steps.append((PASSIVE, j))
    return StepPlan(tuple(steps))


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    lr: float
    active_steps: int
    passive_steps: int
    train_loss: float
    train_acc: float
    test_acc: float
    wall_clock: float  # seconds; kept in memory, excluded from the history file


@dataclass
class TrainHistory:
    epochs: list[EpochRecord] = field(default_factory=list)

    @property
    def total_active_steps(self) -> int:
        return sum(r.active_steps for r in self.epochs)

    @property
    def total_passive_steps(self) -> int:
        return sum(r.passive_steps for r in self.epochs)

    @property
    def final_gap(self) -> float | None:
        if not self.epochs:
            return None
        last = self.epochs[-1]
        return last.train_acc - last.test_acc


def history_lines(history: TrainHistory) -> list[str]:
    """Line-delimited history records; deterministic bytes for a fixed run.

    Wall-clock timings are deliberately not part of this file so a rerun with
    the same config and seed reproduces it byte for byte.
    """
    header = {"format": "history", "version": HISTORY_VERSION, "fields": list(HISTORY_FIELDS)}
    lines = [json.dumps(header)]
    for r in history.epochs:
        lines.append(json.dumps({f: getattr(r, f) for f in HISTORY_FIELDS}))
    return lines


def write_history(path, history: TrainHistory) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(history_lines(history)) + "\n")


def read_history(path) -> TrainHistory:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln]
    if not lines:
        raise ConfigurationError(f"{path}: empty history file")
    header = json.loads(lines[0])
    if header.get("format") != "history" or header.get("version") != HISTORY_VERSION:
        raise ConfigurationError(f"{path}: not a version-{HISTORY_VERSION} history file")
    history = TrainHistory()
    for ln in lines[1:]:
        rec = json.loads(ln)
        history.epochs.append(EpochRecord(wall_clock=0.0, **rec))
    return history


def _check_loss(value: float, kind: str) -> None:
    if not math.isfinite(value) or value > DIVERGENCE_THRESHOLD:
        raise DivergedRunError(f"{kind} step loss diverged to {value!r}")


def train_step_active(net, x, y, opt: SgdState, lr: float) -> float:
    """One SGD step on an active batch; the passive head stays untouched."""
    loss = softmax_cross_entropy(net.forward_active(x, mode="train"), y)
    value = loss.item()
    _check_loss(value, "active")
    backward(loss)
    sgd_step(net.partition_params("W", "MA"), opt, lr)
    return value


def train_step_passive(net, x, y, opt: SgdState, lr: float, update_bn: bool = True) -> float:
    """One SGD step on a passive batch; the active head stays untouched."""
    loss = softmax_cross_entropy(
        net.forward_passive(x, mode="train", update_bn=update_bn), y
    )
    value = loss.item()
    _check_loss(value, "passive")
    backward(loss)
    sgd_step(net.partition_params("W", "MP"), opt, lr)
    return value


def prepare_run_data(cfg):
    """Load, subsample, normalize, and shape-adapt the run's datasets.

    Channel statistics come from the (possibly reduced) active training split
    and are shared by the test and passive datasets.
    """
    train_ds, test_ds, passive_ds = cfg.load_datasets()
    if cfg.data_fraction < 1.0:
        train_ds = take_fraction(train_ds, cfg.data_fraction, seed=cfg.seed)
    mean, std = channel_stats(train_ds.images)
    train_ds.mean, train_ds.std = mean, std
    test_ds.mean, test_ds.std = mean, std
    if passive_ds is not None:
        passive_ds = adapt_dataset(passive_ds, train_ds.image_shape)
        passive_ds.mean, passive_ds.std = mean, std
    return train_ds, test_ds, passive_ds


def train(cfg):
    """Run the full training loop described by a resolved run config.

    Returns ``(stripped_model, history)``. On divergence the partial history
    is attached to the raised :class:`DivergedRunError`.
    """
    policy = cfg.policy
    train_ds, test_ds, passive_ds = prepare_run_data(cfg)
    if passive_ds is None and policy.injecting:
        raise ConfigurationError("policy.g is finite but no passive dataset is configured")

    trunk = cfg.make_trunk(train_ds.image_shape)
    active_head = HeadSpec(class_count=train_ds.class_count, hidden=cfg.head_hidden)
    passive_head = (
        HeadSpec(class_count=passive_ds.class_count, hidden=cfg.head_hidden)
        if passive_ds is not None
        else None
    )
    net = build_network(trunk, active_head, passive_head, init_seed=cfg.seed)
    opt = SgdState(
        momentum=cfg.momentum, weight_decay=cfg.weight_decay, decay_bn_params=cfg.decay_bn_params
    )

    active_iter = ActiveIterator(
        train_ds, policy.active_batch_size, named_stream(cfg.seed, "shuffle", "active")
    )
    if active_iter.num_batches < 1:
        raise ConfigurationError(
            f"active dataset of {len(train_ds)} samples is smaller than one batch "
            f"of {policy.active_batch_size}"
        )
    passive_iter = (
        PassiveIterator(
            passive_ds, policy.passive_batch_size, named_stream(cfg.seed, "shuffle", "passive")
        )
        if passive_ds is not None
        else None
    )
    aug_active = named_stream(cfg.seed, "augment", "active")
    aug_passive = named_stream(cfg.seed, "augment", "passive")

    history = TrainHistory()
    try:
        for epoch in range(cfg.epochs):
            started = time.perf_counter()
            lr = lr_at(cfg.lr_schedule, epoch)
            plan = plan_epoch(active_iter.num_batches, policy.g)
            batches = active_iter.epoch_indices()
            loss_sum = 0.0
            n_active = n_passive = 0
            for tag, _ in plan.steps:
                if tag == ACTIVE:
                    x, y = prepare_batch(train_ds, next(batches), cfg.augment, aug_active)
                    loss_sum += train_step_active(net, x, y, opt, lr)
                    n_active += 1
                else:
                    x, y = prepare_batch(
                        passive_ds, passive_iter.next_batch(), cfg.augment, aug_passive
                    )
                    train_step_passive(
                        net, x, y, opt, lr, update_bn=policy.update_bn_on_passive
                    )
                    n_passive += 1
            train_eval = evaluate(net, train_ds, cfg.eval_batch_size)
            test_eval = evaluate(net, test_ds, cfg.eval_batch_size)
            history.epochs.append(
                EpochRecord(
                    epoch=epoch,
                    lr=lr,
                    active_steps=n_active,
                    passive_steps=n_passive,
                    train_loss=loss_sum / n_active,
                    train_acc=train_eval.accuracy,
                    test_acc=test_eval.accuracy,
                    wall_clock=time.perf_counter() - started,
                )
            )
    except DivergedRunError as exc:
        exc.history = history
        raise
    return net.strip_passive_head(), history


def rng_stream_states(seed: int) -> dict:
    """Initial bit-generator states of the named streams a run uses."""
    states = {}
    for name in ("shuffle/active", "shuffle/passive", "augment/active", "augment/passive"):
        states[name] = named_stream(seed, *name.split("/")).bit_generator.state
    return states
