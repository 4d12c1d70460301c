import numpy as np
import pytest

from hybridfb.train.data import (RECORD_BYTES, DatasetError, SyntheticSpec, augment, generate_synthetic,
                                 iterate_batches, load_cifar10_binary, nearest_mean_accuracy,
                                 pairwise_error_bound, prototype_accuracy, read_cifar10_records,
                                 write_cifar10_records)


def _records(rng, n):
    return rng.integers(0, 256, (n, 3, 32, 32), dtype=np.uint8), rng.integers(0, 10, n)


def test_cifar_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    imgs, labels = _records(rng, 5)
    write_cifar10_records(tmp_path / "b.bin", imgs, labels)
    assert (tmp_path / "b.bin").stat().st_size == 5 * RECORD_BYTES
    x, y = read_cifar10_records(tmp_path / "b.bin")
    assert np.array_equal(x, imgs) and np.array_equal(y, labels)


def test_cifar_record_layout(tmp_path):
    # label byte then R plane, G plane, B plane, each row-major
    rec = bytes([7]) + bytes(range(256)) * 12
    (tmp_path / "one.bin").write_bytes(rec)
    x, y = read_cifar10_records(tmp_path / "one.bin")
    assert y[0] == 7 and x[0, 0, 0, 1] == 1 and x[0, 1, 0, 0] == (1024 % 256)


def test_cifar_directory_loader(tmp_path):
    rng = np.random.default_rng(1)
    for i in (1, 2):
        write_cifar10_records(tmp_path / f"data_batch_{i}.bin", *_records(rng, 4))
    write_cifar10_records(tmp_path / "test_batch.bin", *_records(rng, 3))
    ds = load_cifar10_binary(tmp_path)
    assert ds.x_train.shape == (8, 3, 32, 32) and ds.x_eval.shape == (3, 3, 32, 32)
    np.testing.assert_allclose(ds.x_train.mean(axis=(0, 2, 3)), 0, atol=1e-5)


def test_cifar_holdout_split(tmp_path):
    write_cifar10_records(tmp_path / "all.bin", *_records(np.random.default_rng(2), 10))
    ds = load_cifar10_binary(tmp_path / "all.bin", eval_fraction=0.2)
    assert len(ds.y_train) == 8 and len(ds.y_eval) == 2


def test_cifar_errors(tmp_path):
    with pytest.raises(DatasetError):
        load_cifar10_binary(tmp_path / "missing")
    with pytest.raises(DatasetError):
        load_cifar10_binary(tmp_path)  # empty directory
    (tmp_path / "short.bin").write_bytes(b"\x00" * 100)
    with pytest.raises(DatasetError):
        read_cifar10_records(tmp_path / "short.bin")


def test_synthetic_deterministic_and_separable():
    spec = SyntheticSpec(n_train=300, n_eval=200)
    a, b = generate_synthetic(spec, 3), generate_synthetic(spec, 3)
    assert np.array_equal(a.x_train, b.x_train) and np.array_equal(a.y_eval, b.y_eval)
    assert prototype_accuracy(a) == 1.0
    assert pairwise_error_bound(10, 10) < 1e-5
    assert nearest_mean_accuracy(a) > 0.8


def test_synthetic_harder_when_closer():
    spec = SyntheticSpec(n_train=200, n_eval=2000, separation=1.0)
    acc = prototype_accuracy(generate_synthetic(spec, 0))
    assert acc < 0.95


def test_normalize_idempotent():
    ds = generate_synthetic(SyntheticSpec(n_train=50, n_eval=10), 0)
    x = ds.x_train.copy()
    assert ds.normalize() is ds and np.array_equal(ds.x_train, x)


def test_synthetic_spec_validation():
    with pytest.raises(ValueError):
        SyntheticSpec(num_classes=1)
    with pytest.raises(ValueError):
        SyntheticSpec(separation=0)


def test_augment_flip_and_crop():
    rng = np.random.default_rng(0)
    x = np.arange(2 * 1 * 4 * 4, dtype=np.float32).reshape(2, 1, 4, 4)
    out = augment(x, rng, flip=False, crop_padding=2)
    assert out.shape == x.shape
    flipped = augment(x, np.random.default_rng(5), flip=True, crop_padding=0)
    for i in range(2):
        assert np.array_equal(flipped[i], x[i]) or np.array_equal(flipped[i], x[i, :, :, ::-1])


def test_iterate_batches_covers_everything():
    ds = generate_synthetic(SyntheticSpec(n_train=70, n_eval=30), 0)
    seen = np.concatenate([y for _, y in iterate_batches(ds, 16, np.random.default_rng(0))])
    assert sorted(seen.tolist()) == sorted(ds.y_train.tolist())
    ev = list(iterate_batches(ds, 16, np.random.default_rng(0), train=False))
    assert [len(y) for _, y in ev] == [16, 14]
