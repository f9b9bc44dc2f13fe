"""Datasets: binary loaders, synthetic generators, augmentation, iteration.

Images live in memory as (N, C, H, W) float32 arrays scaled to [0, 1]. Batches
are augmented in pixel space (zero pad, random crop, random horizontal flip)
and then normalized with per-channel statistics computed from the active
training split; passive images are adapted to the active input shape first and
normalized with the same statistics, so the distribution mismatch stays a
property of content rather than scaling.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataFormatError, DimensionError, NonFiniteError
from .rng import named_stream

CIFAR_RECORD = 3073  # 1 label byte + 32*32*3 pixel bytes (R, G, B planes)

IDX_UBYTE = 0x08


@dataclass
class LabeledDataset:
    """Images plus integer labels, tagged with the role they play in a run."""

    role: str  # "active" or "passive"
    images: np.ndarray  # (N, C, H, W) float32 in [0, 1]
    labels: np.ndarray  # (N,) int64
    class_count: int
    mean: np.ndarray | None = None  # per-channel, set from the active train split
    std: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def validate(self) -> "LabeledDataset":
        if len(self.labels) < 1:
            raise ConfigurationError(f"{self.role} dataset is empty")
        if self.images.shape[0] != self.labels.shape[0]:
            raise DimensionError(
                f"image count {self.images.shape} does not match label count {self.labels.shape}"
            )
        if not np.all(np.isfinite(self.images)):
            raise NonFiniteError(f"{self.role} dataset contains non-finite pixels")
        if self.labels.min() < 0 or self.labels.max() >= self.class_count:
            raise ConfigurationError(
                f"{self.role} dataset has labels outside [0, {self.class_count})"
            )
        return self


def channel_stats(images: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and std (std floored at 1e-6)."""
    mean = images.mean(axis=(0, 2, 3), dtype=np.float64)
    std = np.maximum(images.std(axis=(0, 2, 3), dtype=np.float64), 1e-6)
    return mean.astype(np.float32), std.astype(np.float32)


def normalize_images(images: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    return (images - mean[:, None, None]) / std[:, None, None]


# --------------------------------------------------------------------- loaders


def load_cifar10_binary(path, role: str = "active") -> LabeledDataset:
    """Read CIFAR-10 binary batch files (3073-byte records).

    ``path`` may be one file, a directory (all ``*.bin`` inside, sorted), or a
    list of files.
    """
    if isinstance(path, (list, tuple)):
        files = [Path(p) for p in path]
    else:
        p = Path(path)
        files = sorted(p.glob("*.bin")) if p.is_dir() else [p]
    if not files:
        raise DataFormatError(f"{path}: no CIFAR-10 .bin files found")
    images, labels = [], []
    for f in files:
        raw = f.read_bytes()
        if len(raw) == 0 or len(raw) % CIFAR_RECORD != 0:
            raise DataFormatError(
                f"{f}: truncated CIFAR-10 record at byte offset {len(raw) - len(raw) % CIFAR_RECORD}"
            )
        records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        batch_labels = records[:, 0]
        bad = np.nonzero(batch_labels > 9)[0]
        if bad.size:
            raise DataFormatError(
                f"{f}: label byte {batch_labels[bad[0]]} > 9 at byte offset {bad[0] * CIFAR_RECORD}"
            )
        images.append(records[:, 1:].reshape(-1, 3, 32, 32))
        labels.append(batch_labels)
    pixels = np.concatenate(images).astype(np.float32) / 255.0
    return LabeledDataset(
        role=role,
        images=pixels,
        labels=np.concatenate(labels).astype(np.int64),
        class_count=10,
    ).validate()


def _read_idx(path, expect_dims) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise DataFormatError(f"{path}: too short for an IDX header")
    zero, dtype_code, ndim = struct.unpack(">HBB", raw[:4])
    if zero != 0 or dtype_code != IDX_UBYTE:
        raise DataFormatError(
            f"{path}: bad IDX magic 0x{int.from_bytes(raw[:4], 'big'):08x}"
        )
    if ndim not in expect_dims:
        raise DataFormatError(
            f"{path}: IDX has {ndim} dimensions, expected one of {sorted(expect_dims)}"
        )
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise DataFormatError(f"{path}: truncated IDX dimension table")
    dims = struct.unpack(f">{ndim}I", raw[4:header_len])
    count = int(np.prod(dims))
    if len(raw) != header_len + count:
        raise DataFormatError(
            f"{path}: IDX payload is {len(raw) - header_len} bytes, expected {count}"
        )
    return np.frombuffer(raw, dtype=np.uint8, offset=header_len).reshape(dims)


def load_idx(images_path, labels_path, class_count: int | None = None, role: str = "active") -> LabeledDataset:
    """Read an IDX image/label file pair (MNIST-style, big-endian).

    3-d image files (N, H, W) load as single-channel; 4-d files are read as
    (N, C, H, W), the carrier convention for pre-converted RGB datasets.
    """
    imgs = _read_idx(images_path, expect_dims={3, 4})
    labels = _read_idx(labels_path, expect_dims={1})
    if imgs.ndim == 3:
        imgs = imgs[:, None, :, :]
    if imgs.shape[0] != labels.shape[0]:
        raise DataFormatError(
            f"{images_path} has {imgs.shape[0]} images but {labels_path} has {labels.shape[0]} labels"
        )
    labels = labels.astype(np.int64)
    k = int(labels.max()) + 1 if class_count is None else class_count
    return LabeledDataset(
        role=role,
        images=imgs.astype(np.float32) / 255.0,
        labels=labels,
        class_count=k,
    ).validate()


# --------------------------------------------------------------- synthetic data


@dataclass(frozen=True)
class SynthSpec:
    """Procedural active/passive dataset pair with disjoint generative rules."""

    class_count: int = 10
    active_count: int = 2048
    test_count: int = 1024
    passive_count: int = 2048
    channels: int = 3
    height: int = 16
    width: int = 16
    noise: float = 0.35
    label_noise: float = 0.0  # fraction of active train labels resampled uniformly
    passive_style: str = "stripes"

    def __post_init__(self):
        if self.class_count < 2:
            raise ConfigurationError(f"synthetic class_count must be >= 2, got {self.class_count}")
        if min(self.active_count, self.test_count, self.passive_count) < 1:
            raise ConfigurationError("synthetic sample counts must be positive")
        if min(self.channels, self.height, self.width) < 1:
            raise ConfigurationError("synthetic image extents must be positive")
        if not 0.0 <= self.label_noise < 1.0:
            raise ConfigurationError(f"label_noise must be in [0, 1), got {self.label_noise}")
        if self.passive_style not in ("stripes", "checker"):
            raise ConfigurationError(
                f"unknown passive style {self.passive_style!r} (choose stripes or checker)"
            )


def _blob_templates(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    """Per-class smooth blob patterns: sums of random Gaussian bumps."""
    yy, xx = np.meshgrid(
        np.linspace(0.0, 1.0, spec.height), np.linspace(0.0, 1.0, spec.width), indexing="ij"
    )
    templates = np.zeros((spec.class_count, spec.channels, spec.height, spec.width), np.float64)
    for k in range(spec.class_count):
        for _ in range(3):
            cy, cx = rng.uniform(0.15, 0.85, size=2)
            sigma = rng.uniform(0.08, 0.22)
            bump = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma**2))
            amps = rng.uniform(0.3, 1.0, size=spec.channels)
            templates[k] += amps[:, None, None] * bump
        templates[k] /= templates[k].max()
    return templates


def _active_samples(spec: SynthSpec, templates, count, rng) -> LabeledDataset:
    labels = rng.integers(0, spec.class_count, size=count)
    contrast = rng.uniform(0.7, 1.2, size=count)
    noise = rng.normal(0.0, spec.noise, size=(count, spec.channels, spec.height, spec.width))
    images = np.clip(contrast[:, None, None, None] * templates[labels] + noise, 0.0, 1.0)
    return LabeledDataset(
        role="active",
        images=images.astype(np.float32),
        labels=labels.astype(np.int64),
        class_count=spec.class_count,
    ).validate()


def _passive_samples(spec: SynthSpec, count, rng) -> LabeledDataset:
    """Oriented gratings or checkerboards: frequency content unlike the blobs."""
    yy, xx = np.meshgrid(
        np.arange(spec.height, dtype=np.float64),
        np.arange(spec.width, dtype=np.float64),
        indexing="ij",
    )
    k = spec.class_count
    labels = rng.integers(0, k, size=count)
    images = np.empty((count, spec.channels, spec.height, spec.width), np.float64)
    if spec.passive_style == "stripes":
        thetas = np.pi * (np.arange(k) / k + rng.uniform(-0.03, 0.03, size=k))
        freqs = rng.uniform(2.0, 5.0, size=k)
        phases = rng.uniform(0.0, 2.0 * np.pi, size=count)
        for i, lbl in enumerate(labels):
            t, f = thetas[lbl], freqs[lbl]
            wave = np.sin(
                2.0 * np.pi * f * (yy * np.sin(t) + xx * np.cos(t)) / max(spec.height, spec.width)
                + phases[i]
            )
            images[i] = 0.5 + 0.45 * wave
    else:  # checker
        cells = 1 + (np.arange(k) % 5)
        shifts = rng.integers(0, 8, size=(count, 2))
        for i, lbl in enumerate(labels):
            c = cells[lbl]
            pattern = ((yy + shifts[i, 0]) // c + (xx + shifts[i, 1]) // c) % 2
            images[i] = 0.15 + 0.7 * pattern
    images += rng.normal(0.0, 0.05, size=images.shape)
    return LabeledDataset(
        role="passive",
        images=np.clip(images, 0.0, 1.0).astype(np.float32),
        labels=labels.astype(np.int64),
        class_count=k,
    ).validate()


def _corrupt_labels(dataset: LabeledDataset, fraction: float, rng) -> LabeledDataset:
    """Resample a fraction of labels uniformly; the overfitting surface."""
    if fraction <= 0.0:
        return dataset
    n = len(dataset)
    flips = rng.choice(n, size=int(round(fraction * n)), replace=False)
    labels = dataset.labels.copy()
    labels[flips] = rng.integers(0, dataset.class_count, size=len(flips))
    dataset.labels = labels
    return dataset


def synth_passive(spec: SynthSpec, seed: int) -> LabeledDataset:
    """Just the passive dataset, deterministic in ``seed``."""
    return _passive_samples(spec, spec.passive_count, named_stream(seed, "synth", "passive"))


def synth_pair(spec: SynthSpec, seed: int) -> tuple[LabeledDataset, LabeledDataset]:
    """One active and one passive dataset, deterministic in ``seed``."""
    templates = _blob_templates(spec, named_stream(seed, "synth", "active", "templates"))
    active = _corrupt_labels(
        _active_samples(
            spec, templates, spec.active_count, named_stream(seed, "synth", "active", "samples")
        ),
        spec.label_noise,
        named_stream(seed, "synth", "active", "label-noise"),
    )
    return active, synth_passive(spec, seed)


def synth_experiment(spec: SynthSpec, seed: int):
    """(train, test, passive) triple; train and test share class templates.

    Label noise applies to the train split only; the test split stays clean.
    """
    templates = _blob_templates(spec, named_stream(seed, "synth", "active", "templates"))
    train = _corrupt_labels(
        _active_samples(
            spec, templates, spec.active_count, named_stream(seed, "synth", "active", "samples")
        ),
        spec.label_noise,
        named_stream(seed, "synth", "active", "label-noise"),
    )
    test = _active_samples(
        spec, templates, spec.test_count, named_stream(seed, "synth", "active", "test-samples")
    )
    return train, test, synth_passive(spec, seed)


# ------------------------------------------------------------------ adaptation


def _bilinear_axis(n_in: int, n_out: int):
    centers = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    centers = np.clip(centers, 0.0, n_in - 1.0)
    lo = np.floor(centers).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    w = (centers - lo).astype(np.float32)
    return lo, hi, w


def adapt_images(images: np.ndarray, target: tuple[int, int, int]) -> np.ndarray:
    """Bilinear-resize a (N, C, H, W) stack to the target (C, H, W).

    Channel rules: single-channel input replicates to the target channel
    count; more channels than the target truncates (with a warning); anything
    else is an error. Same-shape input is returned unchanged.
    """
    tc, th, tw = target
    if min(tc, th, tw) < 1:
        raise ConfigurationError(f"adapt target shape {target} has non-positive extent")
    n, c, h, w = images.shape
    if (c, h, w) == (tc, th, tw):
        return images
    if c != tc:
        if c == 1:
            images = np.repeat(images, tc, axis=1)
        elif c > tc:
            warnings.warn(
                f"adapting {c}-channel images to {tc} channels by truncation", stacklevel=2
            )
            images = images[:, :tc]
        else:
            raise ConfigurationError(
                f"cannot adapt {c}-channel images to {tc} channels (only 1->C replication "
                f"and C_in>C truncation are supported)"
            )
    if images.shape[2:] != (th, tw):
        ylo, yhi, wy = _bilinear_axis(images.shape[2], th)
        xlo, xhi, wx = _bilinear_axis(images.shape[3], tw)
        top = images[:, :, ylo][:, :, :, xlo] * (1 - wx) + images[:, :, ylo][:, :, :, xhi] * wx
        bot = images[:, :, yhi][:, :, :, xlo] * (1 - wx) + images[:, :, yhi][:, :, :, xhi] * wx
        images = top * (1 - wy[:, None]) + bot * wy[:, None]
    return images.astype(np.float32)


def adapt_passive(image: np.ndarray, target: tuple[int, int, int]) -> np.ndarray:
    """Shape-adapt one (C, H, W) passive image to the active input shape."""
    if image.ndim != 3:
        raise DimensionError(f"adapt_passive expects one (C, H, W) image, got shape {image.shape}")
    return adapt_images(image[None], target)[0]


def adapt_dataset(dataset: LabeledDataset, target: tuple[int, int, int]) -> LabeledDataset:
    images = adapt_images(dataset.images, target)
    if images is dataset.images:
        return dataset
    return LabeledDataset(
        role=dataset.role,
        images=images,
        labels=dataset.labels,
        class_count=dataset.class_count,
        mean=dataset.mean,
        std=dataset.std,
    )


# ---------------------------------------------------------------- augmentation


@dataclass(frozen=True)
class AugmentConfig:
    pad: int = 4
    crop: tuple[int, int] | None = None  # defaults to the input extents
    flip_prob: float = 0.5
    enabled: bool = True


def augment_batch(batch: np.ndarray, config: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Zero-pad, random-crop, and randomly h-flip each image in the batch.

    Draw order per call: crop offsets (B, 2), then flip uniforms (B,). The
    output sequence is a pure function of the stream state.
    """
    if not config.enabled:
        return batch
    b, c, h, w = batch.shape
    ch, cw = config.crop if config.crop is not None else (h, w)
    ph, pw = h + 2 * config.pad, w + 2 * config.pad
    if ch > ph or cw > pw:
        raise ConfigurationError(f"crop {ch}x{cw} exceeds padded extents {ph}x{pw}")
    padded = (
        np.pad(batch, ((0, 0), (0, 0), (config.pad, config.pad), (config.pad, config.pad)))
        if config.pad
        else batch
    )
    dys = rng.integers(0, ph - ch + 1, size=b)
    dxs = rng.integers(0, pw - cw + 1, size=b)
    flips = rng.random(b) < config.flip_prob
    out = np.empty((b, c, ch, cw), dtype=batch.dtype)
    for i in range(b):
        out[i] = padded[i, :, dys[i] : dys[i] + ch, dxs[i] : dxs[i] + cw]
    if flips.any():
        out[flips] = out[flips, :, :, ::-1]
    return out


# ------------------------------------------------------------------ subsetting


def take_fraction(dataset: LabeledDataset, fraction: float, seed: int) -> LabeledDataset:
    """Per-class stratified subsample of round(fraction * N) samples.

    Class allocations follow the largest-remainder rule, so each class count
    stays within one sample of exact proportionality. Deterministic in seed.
    """
    if not 0.0 < fraction <= 1.0:
        raise ConfigurationError(f"fraction must be in (0, 1], got {fraction}")
    n = len(dataset)
    total = int(np.floor(fraction * n + 0.5))
    class_indices = [np.nonzero(dataset.labels == c)[0] for c in range(dataset.class_count)]
    exact = np.array([fraction * len(ix) for ix in class_indices])
    alloc = np.floor(exact).astype(np.int64)
    for c in np.argsort(-(exact - alloc), kind="stable")[: total - alloc.sum()]:
        alloc[c] += 1
    empty = [c for c, (ix, a) in enumerate(zip(class_indices, alloc)) if len(ix) and a == 0]
    if empty:
        raise ConfigurationError(
            f"fraction {fraction} yields no samples for class {empty[0]}"
        )
    rng = named_stream(seed, "take_fraction")
    keep = np.sort(
        np.concatenate(
            [rng.permutation(ix)[:a] for ix, a in zip(class_indices, alloc) if len(ix)]
        )
    )
    return LabeledDataset(
        role=dataset.role,
        images=dataset.images[keep],
        labels=dataset.labels[keep],
        class_count=dataset.class_count,
        mean=dataset.mean,
        std=dataset.std,
    )


# ------------------------------------------------------------------- iteration


class ActiveIterator:
    """Epoch-based iteration: each epoch is one shuffled pass over the data."""

    def __init__(self, dataset: LabeledDataset, batch_size: int, rng, drop_last: bool = True):
        if batch_size < 1:
            raise ConfigurationError(f"batch size must be >= 1, got {batch_size}")
        self.dataset = dataset
        self.batch_size = batch_size
        self.rng = rng
        self.drop_last = drop_last

    @property
    def num_batches(self) -> int:
        n, b = len(self.dataset), self.batch_size
        return n // b if self.drop_last else -(-n // b)

    def epoch_indices(self):
        perm = self.rng.permutation(len(self.dataset))
        for start in range(0, self.num_batches * self.batch_size, self.batch_size):
            yield perm[start : start + self.batch_size]


class PassiveIterator:
    """Endless iteration: reshuffles at wraparound, never exhausts."""

    def __init__(self, dataset: LabeledDataset, batch_size: int, rng):
        if batch_size < 1:
            raise ConfigurationError(f"batch size must be >= 1, got {batch_size}")
        self.dataset = dataset
        self.batch_size = batch_size
        self.rng = rng
        self._perm = rng.permutation(len(dataset))
        self._pos = 0

    def next_batch(self) -> np.ndarray:
        parts = []
        need = self.batch_size
        while need > 0:
            if self._pos >= len(self._perm):
                self._perm = self.rng.permutation(len(self.dataset))
                self._pos = 0
            chunk = self._perm[self._pos : self._pos + need]
            parts.append(chunk)
            self._pos += len(chunk)
            need -= len(chunk)
        return np.concatenate(parts) if len(parts) > 1 else parts[0]


def prepare_batch(
    dataset: LabeledDataset,
    indices: np.ndarray,
    augment: AugmentConfig | None = None,
    rng: np.random.Generator | None = None,
):
    """Gather, optionally augment, and normalize one batch."""
    x = dataset.images[indices]
    y = dataset.labels[indices]
    if augment is not None and augment.enabled:
        x = augment_batch(x, augment, rng)
    if dataset.mean is not None:
        x = normalize_images(x, dataset.mean, dataset.std)
    return x, y
