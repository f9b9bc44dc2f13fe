import hashlib

import numpy as np
import pytest

from batchinject.data import (
    ActiveIterator,
    AugmentConfig,
    LabeledDataset,
    PassiveIterator,
    SynthSpec,
    adapt_images,
    adapt_passive,
    augment_batch,
    channel_stats,
    load_cifar10_binary,
    load_idx,
    prepare_batch,
    synth_experiment,
    synth_pair,
    take_fraction,
)
from batchinject.errors import ConfigurationError, DataFormatError
from batchinject.rng import named_stream


# ----------------------------------------------------------------- CIFAR files


def write_cifar_file(path, labels, pixel_fill=None, rng=None):
    records = []
    for i, label in enumerate(labels):
        pixels = (
            rng.integers(0, 256, size=3072, dtype=np.uint8)
            if rng is not None
            else np.full(3072, pixel_fill if pixel_fill is not None else i, dtype=np.uint8)
        )
        records.append(np.concatenate([[np.uint8(label)], pixels]))
    path.write_bytes(np.concatenate(records).astype(np.uint8).tobytes())


def test_cifar_two_record_file(tmp_path):
    f = tmp_path / "batch.bin"
    write_cifar_file(f, [3, 7], rng=np.random.default_rng(0))
    ds = load_cifar10_binary(f)
    assert len(ds) == 2
    assert ds.images.shape == (2, 3, 32, 32)
    assert ds.class_count == 10
    np.testing.assert_array_equal(ds.labels, [3, 7])
    assert ds.images.min() >= 0.0 and ds.images.max() <= 1.0


def test_cifar_truncated_file_reports_offset(tmp_path):
    f = tmp_path / "bad.bin"
    f.write_bytes(b"\x00" * (3073 + 10))
    with pytest.raises(DataFormatError, match="offset 3073"):
        load_cifar10_binary(f)


def test_cifar_label_out_of_range(tmp_path):
    f = tmp_path / "bad_label.bin"
    write_cifar_file(f, [0, 11])
    with pytest.raises(DataFormatError, match="11"):
        load_cifar10_binary(f)


def test_cifar_first_image_round_trips_checksum(tmp_path):
    f = tmp_path / "batch1.bin"
    rng = np.random.default_rng(123)
    write_cifar_file(f, [1, 2, 3], rng=rng)
    raw = f.read_bytes()
    expected = hashlib.sha256(raw[1:3073]).hexdigest()  # pixel bytes of record 0
    ds = load_cifar10_binary(f)
    recovered = np.round(ds.images[0] * 255.0).astype(np.uint8).reshape(-1)
    assert hashlib.sha256(recovered.tobytes()).hexdigest() == expected


# ------------------------------------------------------------------- IDX files


def write_idx_images(path, arr):
    arr = np.asarray(arr, dtype=np.uint8)
    header = (0x0800 + arr.ndim).to_bytes(4, "big") + b"".join(
        int(d).to_bytes(4, "big") for d in arr.shape
    )
    path.write_bytes(header + arr.tobytes())


def write_idx_labels(path, labels):
    labels = np.asarray(labels, dtype=np.uint8)
    path.write_bytes((0x0801).to_bytes(4, "big") + len(labels).to_bytes(4, "big") + labels.tobytes())


def test_idx_pair_loads(tmp_path):
    write_idx_images(tmp_path / "img", np.arange(12).reshape(3, 2, 2))
    write_idx_labels(tmp_path / "lbl", [0, 1, 2])
    ds = load_idx(tmp_path / "img", tmp_path / "lbl")
    assert len(ds) == 3 and ds.class_count == 3
    assert ds.images.shape == (3, 1, 2, 2)


def test_idx_four_dim_images(tmp_path):
    write_idx_images(tmp_path / "img", np.zeros((2, 3, 4, 4)))
    write_idx_labels(tmp_path / "lbl", [1, 0])
    ds = load_idx(tmp_path / "img", tmp_path / "lbl")
    assert ds.images.shape == (2, 3, 4, 4)


def test_idx_swapped_paths_is_magic_error(tmp_path):
    write_idx_images(tmp_path / "img", np.zeros((2, 2, 2)))
    write_idx_labels(tmp_path / "lbl", [0, 1])
    with pytest.raises(DataFormatError, match="dimensions"):
        load_idx(tmp_path / "lbl", tmp_path / "img")


def test_idx_count_mismatch(tmp_path):
    write_idx_images(tmp_path / "img", np.zeros((3, 2, 2)))
    write_idx_labels(tmp_path / "lbl", [0, 1])
    with pytest.raises(DataFormatError, match="labels"):
        load_idx(tmp_path / "img", tmp_path / "lbl")


def test_idx_payload_size_checked(tmp_path):
    f = tmp_path / "img"
    write_idx_images(f, np.zeros((2, 2, 2)))
    f.write_bytes(f.read_bytes()[:-1])
    with pytest.raises(DataFormatError, match="payload"):
        load_idx(f, f)


# ---------------------------------------------------------------- synthetic data


def test_synth_pair_deterministic_in_seed():
    spec = SynthSpec(active_count=64, passive_count=64, test_count=8)
    a1, p1 = synth_pair(spec, seed=9)
    a2, p2 = synth_pair(spec, seed=9)
    assert np.array_equal(a1.images, a2.images)
    assert np.array_equal(p1.images, p2.images)
    assert np.array_equal(a1.labels, a2.labels)


def test_synth_pair_seed_changes_pixels():
    spec = SynthSpec(active_count=64, passive_count=64, test_count=8)
    a1, _ = synth_pair(spec, seed=1)
    a2, _ = synth_pair(spec, seed=2)
    assert a1.images.sum() != a2.images.sum()


def test_synth_train_test_share_templates():
    spec = SynthSpec(active_count=400, test_count=400, passive_count=32)
    train, test, _ = synth_experiment(spec, seed=3)
    # same class templates: per-class mean images correlate strongly
    for k in range(spec.class_count):
        tr = train.images[train.labels == k].mean(0).reshape(-1)
        te = test.images[test.labels == k].mean(0).reshape(-1)
        assert np.corrcoef(tr, te)[0, 1] > 0.7, k


def _ridge_probe_accuracy(x_train, y_train, x_test, y_test, lam=1e-3):
    # binary ridge classifier as an independent "different distribution" oracle
    x_train = np.column_stack([x_train, np.ones(len(x_train))])
    x_test = np.column_stack([x_test, np.ones(len(x_test))])
    w = np.linalg.solve(
        x_train.T @ x_train + lam * np.eye(x_train.shape[1]), x_train.T @ y_train
    )
    return float(np.mean(np.sign(x_test @ w) == y_test))


@pytest.mark.parametrize("style", ["stripes", "checker"])
def test_linear_probe_separates_active_from_passive(style):
    spec = SynthSpec(active_count=300, passive_count=300, test_count=8, passive_style=style)
    active, passive = synth_pair(spec, seed=5)
    x = np.concatenate([active.images, passive.images]).reshape(600, -1).astype(np.float64)
    y = np.concatenate([-np.ones(300), np.ones(300)])
    rng = np.random.default_rng(0)
    perm = rng.permutation(600)
    x, y = x[perm], y[perm]
    acc = _ridge_probe_accuracy(x[:420], y[:420], x[420:], y[420:])
    assert acc >= 0.95


# ----------------------------------------------------------------- augmentation


def test_augment_identity_when_disabled_knobs():
    rng = named_stream(0, "aug")
    batch = np.random.default_rng(1).random((4, 3, 8, 8)).astype(np.float32)
    out = augment_batch(batch, AugmentConfig(pad=0, flip_prob=0.0), rng)
    np.testing.assert_array_equal(out, batch)


def test_augment_flip_is_involution():
    batch = np.random.default_rng(2).random((2, 3, 6, 6)).astype(np.float32)
    flipped = batch[:, :, :, ::-1]
    np.testing.assert_array_equal(flipped[:, :, :, ::-1], batch)


def test_augment_deterministic_under_stream_state():
    batch = np.random.default_rng(3).random((8, 3, 8, 8)).astype(np.float32)
    cfg = AugmentConfig(pad=2, flip_prob=0.5)
    out1 = augment_batch(batch, cfg, named_stream(7, "aug"))
    out2 = augment_batch(batch, cfg, named_stream(7, "aug"))
    np.testing.assert_array_equal(out1, out2)


def test_augment_offset_distribution_uniform():
    # pad=4 on a 1x1 image cropped back to 1x1: 81 possible (dy, dx) offsets
    rng = named_stream(11, "aug")
    n = 100_000
    batch = np.zeros((n, 1, 1, 1), dtype=np.float32)
    ph = 9
    dys = rng.integers(0, ph, size=n)
    dxs = rng.integers(0, ph, size=n)
    counts = np.bincount(dys * ph + dxs, minlength=81)
    expected = n / 81.0
    chi2 = float(((counts - expected) ** 2 / expected).sum())
    # df=80: the 99.9th percentile is ~124.8
    assert chi2 < 135.0


def test_augment_crop_must_fit():
    with pytest.raises(ConfigurationError):
        augment_batch(
            np.zeros((1, 1, 4, 4), dtype=np.float32),
            AugmentConfig(pad=0, crop=(5, 5)),
            named_stream(0, "aug"),
        )


# ------------------------------------------------------------------- adaptation


def test_adapt_same_shape_is_bitwise_identity():
    imgs = np.random.default_rng(4).random((3, 3, 8, 8)).astype(np.float32)
    out = adapt_images(imgs, (3, 8, 8))
    assert out is imgs


def test_adapt_replicates_grayscale():
    img = np.random.default_rng(5).random((1, 28, 28)).astype(np.float32)
    out = adapt_passive(img, (3, 32, 32))
    assert out.shape == (3, 32, 32)
    np.testing.assert_array_equal(out[0], out[1])
    np.testing.assert_array_equal(out[0], out[2])


def test_adapt_upscale_preserves_constant():
    img = np.full((3, 8, 8), 0.37, dtype=np.float32)
    out = adapt_passive(img, (3, 16, 16))
    np.testing.assert_allclose(out, 0.37, rtol=1e-6)


def test_adapt_truncates_with_warning():
    img = np.random.default_rng(6).random((4, 8, 8)).astype(np.float32)
    with pytest.warns(UserWarning, match="truncation"):
        out = adapt_passive(img, (3, 8, 8))
    np.testing.assert_array_equal(out, img[:3])


def test_adapt_rejects_unsupported_channel_combo():
    with pytest.raises(ConfigurationError):
        adapt_passive(np.zeros((2, 8, 8), dtype=np.float32), (3, 8, 8))


# ------------------------------------------------------------------ subsetting


def balanced_dataset(per_class=40, classes=10, seed=0):
    rng = np.random.default_rng(seed)
    n = per_class * classes
    return LabeledDataset(
        role="active",
        images=rng.random((n, 1, 4, 4)).astype(np.float32),
        labels=np.repeat(np.arange(classes), per_class).astype(np.int64),
        class_count=classes,
    )


def test_take_fraction_full_is_identity_set():
    ds = balanced_dataset()
    out = take_fraction(ds, 1.0, seed=1)
    assert len(out) == len(ds)
    np.testing.assert_array_equal(np.sort(out.labels), np.sort(ds.labels))


def test_take_fraction_quarter_of_balanced():
    ds = balanced_dataset(per_class=40)
    out = take_fraction(ds, 0.25, seed=1)
    hist = np.bincount(out.labels, minlength=10)
    np.testing.assert_array_equal(hist, np.full(10, 10))


def test_take_fraction_histogram_proportional_within_one():
    rng = np.random.default_rng(7)
    labels = rng.integers(0, 5, size=333).astype(np.int64)
    ds = LabeledDataset(
        role="active",
        images=rng.random((333, 1, 2, 2)).astype(np.float32),
        labels=labels,
        class_count=5,
    )
    frac = 0.3
    out = take_fraction(ds, frac, seed=2)
    assert len(out) == int(np.floor(frac * 333 + 0.5))
    in_hist = np.bincount(labels, minlength=5)
    out_hist = np.bincount(out.labels, minlength=5)
    assert np.all(np.abs(out_hist - frac * in_hist) <= 1.0)


def test_take_fraction_deterministic():
    ds = balanced_dataset()
    a = take_fraction(ds, 0.5, seed=3)
    b = take_fraction(ds, 0.5, seed=3)
    np.testing.assert_array_equal(a.images, b.images)


def test_take_fraction_empty_class_is_error():
    ds = balanced_dataset(per_class=2, classes=3)
    with pytest.raises(ConfigurationError, match="class"):
        take_fraction(ds, 0.1, seed=0)


# -------------------------------------------------------------------- iteration


def test_active_epoch_covers_every_index_once():
    ds = balanced_dataset(per_class=7, classes=3)  # 21 samples
    it = ActiveIterator(ds, batch_size=4, rng=named_stream(0, "shuffle"), drop_last=False)
    seen = np.concatenate(list(it.epoch_indices()))
    assert sorted(seen.tolist()) == list(range(21))


def test_active_drop_last_truncates():
    ds = balanced_dataset(per_class=7, classes=3)
    it = ActiveIterator(ds, batch_size=4, rng=named_stream(0, "shuffle"), drop_last=True)
    batches = list(it.epoch_indices())
    assert len(batches) == 5 and all(len(b) == 4 for b in batches)


def test_passive_iterator_never_exhausts():
    ds = balanced_dataset(per_class=3, classes=2)  # 6 samples
    it = PassiveIterator(ds, batch_size=4, rng=named_stream(1, "shuffle"))
    counts = np.zeros(6, dtype=int)
    for _ in range(9):
        batch = it.next_batch()
        assert len(batch) == 4
        np.add.at(counts, batch, 1)
    assert counts.sum() == 36
    assert counts.min() >= 36 // 6 - 1  # near-even coverage across wraparounds


def test_iteration_reproducible_from_stream():
    ds = balanced_dataset()
    run1 = [b.tolist() for b in ActiveIterator(ds, 16, named_stream(5, "s")).epoch_indices()]
    run2 = [b.tolist() for b in ActiveIterator(ds, 16, named_stream(5, "s")).epoch_indices()]
    assert run1 == run2


def test_prepare_batch_normalizes_with_dataset_stats():
    ds = balanced_dataset()
    ds.mean, ds.std = channel_stats(ds.images)
    x, y = prepare_batch(ds, np.arange(len(ds)))
    assert abs(float(x.mean())) < 1e-5
    assert abs(float(x.std()) - 1.0) < 1e-3
