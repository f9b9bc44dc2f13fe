"""Run configuration: flat key = value files, defaults, resolution, echo.

The config format is a flat, diff-able list of dotted keys. Resolution is
pure: defaults, then file values, then command-line overrides, last wins; the
fully resolved mapping is echoed into the output directory so a run's exact
provenance is one file. Unknown keys are errors (they are almost always
typos).
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path

from .data import (
    AugmentConfig,
    SynthSpec,
    load_cifar10_binary,
    load_idx,
    synth_experiment,
    synth_passive,
)
from .errors import ConfigurationError
from .model import TRUNK_PRESETS, ConvBlock, TrunkSpec
from .optim import LrSchedule
from .training import InjectionPolicy

CONFIG_VERSION = 1

DEFAULTS: dict[str, str] = {
    "seed": "1",
    "epochs": "40",
    "out": "",
    "data.fraction": "1.0",
    "active.source": "synth",
    "active.cifar10.train": "",
    "active.cifar10.test": "",
    "active.idx.train_images": "",
    "active.idx.train_labels": "",
    "active.idx.test_images": "",
    "active.idx.test_labels": "",
    "active.idx.classes": "0",
    "passive.source": "synth",
    "passive.synth.style": "stripes",
    "passive.idx.images": "",
    "passive.idx.labels": "",
    "passive.idx.classes": "0",
    "passive.cifar10.files": "",
    "synth.classes": "10",
    "synth.train_samples": "2048",
    "synth.test_samples": "1024",
    "synth.passive_samples": "2048",
    "synth.channels": "3",
    "synth.height": "16",
    "synth.width": "16",
    "synth.noise": "0.35",
    "synth.label_noise": "0.0",
    "policy.g": "100",
    "policy.active_batch": "128",
    "policy.passive_batch": "128",
    "policy.update_bn_on_passive": "true",
    "optim.lr": "0.1",
    "optim.momentum": "0.9",
    "optim.weight_decay": "5e-4",
    "optim.decay_bn_params": "true",
    "lr.decay_factor": "5.0",
    "lr.decay_period": "50",
    "augment.enabled": "true",
    "augment.pad": "4",
    "augment.crop": "",
    "augment.flip_prob": "0.5",
    "model.trunk": "small",
    "model.trunk.blocks": "",
    "model.head_hidden": "",
    "eval.batch": "256",
    "ablate.g_values": "1,100,inf",
    "ablate.fractions": "1.0,0.25,0.125",
    "ablate.passive_styles": "stripes,checker",
    "ablate.seeds": "1,2,3",
}

_TRUE = {"true", "yes", "1", "on"}
_FALSE = {"false", "no", "0", "off"}


def parse_config_file(path) -> dict[str, str]:
    """Read ``key = value`` lines; later duplicates win; # starts a comment line."""
    mapping: dict[str, str] = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        mapping[key.strip()] = value.strip()
    return mapping


def _int(flat, key, minimum=None):
    try:
        value = int(flat[key])
    except ValueError:
        raise ConfigurationError(f"{key}: expected an integer, got {flat[key]!r}") from None
    if minimum is not None and value < minimum:
        raise ConfigurationError(f"{key}: must be >= {minimum}, got {value}")
    return value


def _float(flat, key):
    try:
        return float(flat[key])
    except ValueError:
        raise ConfigurationError(f"{key}: expected a number, got {flat[key]!r}") from None


def _bool(flat, key):
    value = flat[key].lower()
    if value in _TRUE:
        return True
    if value in _FALSE:
        return False
    raise ConfigurationError(f"{key}: expected true/false, got {flat[key]!r}")


def _g_value(text, key):
    if text.strip().lower() in ("inf", "infinity", "none"):
        return math.inf
    try:
        g = int(text)
    except ValueError:
        raise ConfigurationError(f"{key}: expected an integer >= 1 or 'inf', got {text!r}") from None
    if g < 1:
        raise ConfigurationError(f"{key}: expected an integer >= 1 or 'inf', got {text!r}")
    return g


def _csv(flat, key):
    return [item.strip() for item in flat[key].split(",") if item.strip()]


def _data_root() -> Path:
    return Path(os.environ.get("BATCHINJECT_DATA_ROOT", "."))


def _resolve_path(p: str) -> Path:
    path = Path(p)
    return path if path.is_absolute() else _data_root() / path


def _parse_trunk_blocks(text: str, key: str) -> tuple[ConvBlock, ...]:
    blocks = []
    for part in text.split(","):
        fields = part.strip().split(":")
        if len(fields) != 4:
            raise ConfigurationError(
                f"{key}: each block must be out:kernel:stride:padding, got {part.strip()!r}"
            )
        try:
            out, kernel, stride, pad = (int(f) for f in fields)
        except ValueError:
            raise ConfigurationError(f"{key}: non-integer block field in {part.strip()!r}") from None
        blocks.append(ConvBlock(out, kernel, stride, pad))
    return tuple(blocks)


@dataclass(frozen=True)
class RunConfig:
    """A fully resolved run description. Construct via :func:`resolve_config`."""

    flat: tuple[tuple[str, str], ...]
    seed: int
    epochs: int
    out_dir: str
    data_fraction: float
    active_kind: str
    passive_kind: str
    synth: SynthSpec
    policy: InjectionPolicy
    momentum: float
    weight_decay: float
    decay_bn_params: bool
    lr_schedule: LrSchedule
    augment: AugmentConfig
    trunk_preset: str
    trunk_blocks: tuple[ConvBlock, ...]
    head_hidden: tuple[int, ...]
    eval_batch_size: int
    ablate_g_values: tuple
    ablate_fractions: tuple[float, ...]
    ablate_passive_styles: tuple[str, ...]
    ablate_seeds: tuple[int, ...]

    def flat_dict(self) -> dict[str, str]:
        return dict(self.flat)

    def make_trunk(self, in_shape) -> TrunkSpec:
        if self.trunk_preset == "custom":
            return TrunkSpec(in_shape=tuple(in_shape), blocks=self.trunk_blocks)
        return TRUNK_PRESETS[self.trunk_preset](tuple(in_shape))

    def load_datasets(self):
        """(active train, active test, passive or None), raw and un-normalized."""
        flat = self.flat_dict()
        if self.active_kind == "synth":
            train, test, synth_passive_ds = synth_experiment(self.synth, self.seed)
        elif self.active_kind == "cifar10":
            train = load_cifar10_binary(
                [_resolve_path(p) for p in _require_csv(flat, "active.cifar10.train")],
                role="active",
            )
            test = load_cifar10_binary(
                [_resolve_path(p) for p in _require_csv(flat, "active.cifar10.test")],
                role="active",
            )
            synth_passive_ds = None
        else:  # idx
            classes = self.seed_independent_idx_classes("active.idx.classes", flat)
            train = load_idx(
                _resolve_path(_require(flat, "active.idx.train_images")),
                _resolve_path(_require(flat, "active.idx.train_labels")),
                class_count=classes,
                role="active",
            )
            test = load_idx(
                _resolve_path(_require(flat, "active.idx.test_images")),
                _resolve_path(_require(flat, "active.idx.test_labels")),
                class_count=classes,
                role="active",
            )
            synth_passive_ds = None

        if self.passive_kind == "none":
            passive = None
        elif self.passive_kind == "synth":
            passive = (
                synth_passive_ds
                if synth_passive_ds is not None
                else synth_passive(self.synth, self.seed)
            )
        elif self.passive_kind == "cifar10":
            passive = load_cifar10_binary(
                [_resolve_path(p) for p in _require_csv(flat, "passive.cifar10.files")],
                role="passive",
            )
        else:  # idx
            classes = self.seed_independent_idx_classes("passive.idx.classes", flat)
            passive = load_idx(
                _resolve_path(_require(flat, "passive.idx.images")),
                _resolve_path(_require(flat, "passive.idx.labels")),
                class_count=classes,
                role="passive",
            )
        return train, test, passive

    @staticmethod
    def seed_independent_idx_classes(key, flat):
        n = int(flat[key])
        return n if n > 0 else None


def _require(flat, key):
    if not flat[key]:
        raise ConfigurationError(f"{key}: required for the selected data source but empty")
    return flat[key]


def _require_csv(flat, key):
    values = [item.strip() for item in flat[key].split(",") if item.strip()]
    if not values:
        raise ConfigurationError(f"{key}: required for the selected data source but empty")
    return values


def resolve_config(
    file_values: dict[str, str] | None = None, overrides: dict[str, str] | None = None
) -> RunConfig:
    """Pure resolution: defaults <- file <- overrides, then validation."""
    flat = dict(DEFAULTS)
    for source_name, source in (("config file", file_values), ("override", overrides)):
        if not source:
            continue
        for key, value in source.items():
            if key not in DEFAULTS:
                raise ConfigurationError(f"unknown config key {key!r} (from {source_name})")
            flat[key] = str(value)

    active_kind = flat["active.source"]
    if active_kind not in ("synth", "cifar10", "idx"):
        raise ConfigurationError(f"active.source: must be synth, cifar10 or idx, got {active_kind!r}")
    passive_kind = flat["passive.source"]
    if passive_kind not in ("none", "synth", "cifar10", "idx"):
        raise ConfigurationError(
            f"passive.source: must be none, synth, cifar10 or idx, got {passive_kind!r}"
        )
    if passive_kind == "none":
        flat["policy.g"] = "inf"  # no passive data forces baseline

    g = _g_value(flat["policy.g"], "policy.g")
    try:
        synth = SynthSpec(
            class_count=_int(flat, "synth.classes", 2),
            active_count=_int(flat, "synth.train_samples", 1),
            test_count=_int(flat, "synth.test_samples", 1),
            passive_count=_int(flat, "synth.passive_samples", 1),
            channels=_int(flat, "synth.channels", 1),
            height=_int(flat, "synth.height", 1),
            width=_int(flat, "synth.width", 1),
            noise=_float(flat, "synth.noise"),
            label_noise=_float(flat, "synth.label_noise"),
            passive_style=flat["passive.synth.style"],
        )
        policy = InjectionPolicy(
            g=g,
            active_batch_size=_int(flat, "policy.active_batch", 1),
            passive_batch_size=_int(flat, "policy.passive_batch", 1),
            update_bn_on_passive=_bool(flat, "policy.update_bn_on_passive"),
        )
        lr_schedule = LrSchedule(
            initial=_float(flat, "optim.lr"),
            factor=_float(flat, "lr.decay_factor"),
            period=_int(flat, "lr.decay_period", 1),
        )
        crop = None
        if flat["augment.crop"]:
            try:
                ch, cw = (int(v) for v in flat["augment.crop"].split("x"))
                crop = (ch, cw)
            except ValueError:
                raise ConfigurationError(
                    f"augment.crop: expected HxW, got {flat['augment.crop']!r}"
                ) from None
        augment = AugmentConfig(
            pad=_int(flat, "augment.pad", 0),
            crop=crop,
            flip_prob=_float(flat, "augment.flip_prob"),
            enabled=_bool(flat, "augment.enabled"),
        )
    except ConfigurationError:
        raise
    data_fraction = _float(flat, "data.fraction")
    if not 0.0 < data_fraction <= 1.0:
        raise ConfigurationError(f"data.fraction: must be in (0, 1], got {flat['data.fraction']!r}")

    trunk_preset = flat["model.trunk"]
    trunk_blocks: tuple[ConvBlock, ...] = ()
    if trunk_preset == "custom":
        trunk_blocks = _parse_trunk_blocks(
            _require(flat, "model.trunk.blocks"), "model.trunk.blocks"
        )
    elif trunk_preset not in TRUNK_PRESETS:
        raise ConfigurationError(
            f"model.trunk: must be one of {sorted(TRUNK_PRESETS)} or custom, got {trunk_preset!r}"
        )
    try:
        head_hidden = tuple(int(h) for h in _csv(flat, "model.head_hidden"))
    except ValueError:
        raise ConfigurationError(
            f"model.head_hidden: expected comma-separated integers, got {flat['model.head_hidden']!r}"
        ) from None

    try:
        ablate_fractions = tuple(float(f) for f in _csv(flat, "ablate.fractions"))
        ablate_seeds = tuple(int(s) for s in _csv(flat, "ablate.seeds"))
    except ValueError:
        raise ConfigurationError("ablate.fractions / ablate.seeds: expected numbers") from None
    ablate_g_values = tuple(_g_value(v, "ablate.g_values") for v in _csv(flat, "ablate.g_values"))

    return RunConfig(
        flat=tuple(sorted(flat.items())),
        seed=_int(flat, "seed", 0),
        epochs=_int(flat, "epochs", 1),
        out_dir=flat["out"],
        data_fraction=data_fraction,
        active_kind=active_kind,
        passive_kind=passive_kind,
        synth=synth,
        policy=policy,
        momentum=_float(flat, "optim.momentum"),
        weight_decay=_float(flat, "optim.weight_decay"),
        decay_bn_params=_bool(flat, "optim.decay_bn_params"),
        lr_schedule=lr_schedule,
        augment=augment,
        trunk_preset=trunk_preset,
        trunk_blocks=trunk_blocks,
        head_hidden=head_hidden,
        eval_batch_size=_int(flat, "eval.batch", 1),
        ablate_g_values=ablate_g_values,
        ablate_fractions=ablate_fractions,
        ablate_passive_styles=tuple(_csv(flat, "ablate.passive_styles")),
        ablate_seeds=ablate_seeds,
    )


def with_overrides(cfg: RunConfig, **overrides: str) -> RunConfig:
    """Re-resolve a config with extra flat-key overrides (pure)."""
    return resolve_config(cfg.flat_dict(), {k: str(v) for k, v in overrides.items()})


def echo_lines(cfg: RunConfig) -> list[str]:
    lines = [f"# batchinject config, resolved, v{CONFIG_VERSION}"]
    lines.extend(f"{key} = {value}" for key, value in cfg.flat)
    return lines


def write_resolved(path, cfg: RunConfig) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(echo_lines(cfg)) + "\n")
