import gzip
import os
import shutil

import numpy as np
import pytest

from margin_engine.data import (
    Dataset,
    export_csv,
    find_mnist,
    import_csv,
    load_idx,
    read_idx_images,
    read_idx_labels,
    split_holdout,
    subset_fraction,
    synth_blobs,
)
from margin_engine.errors import IdxFormatError, InvalidConfigError


def test_idx_fixture_loads(idx_fixture):
    img_path, lbl_path, images, labels = idx_fixture
    data = load_idx(img_path, lbl_path)
    assert len(data) == 2 and data.n == 784
    assert data.labels.tolist() == [7, 2]
    assert data.k == 10
    assert np.max(np.linalg.norm(data.features, axis=1)) == pytest.approx(1.0, rel=1e-15)


def test_idx_round_trip_is_exact(idx_fixture):
    img_path, lbl_path, images, labels = idx_fixture
    assert np.array_equal(read_idx_images(img_path), images)
    assert np.array_equal(read_idx_labels(lbl_path), labels)


def test_idx_reads_gzip(idx_fixture, tmp_path):
    img_path, _, images, _ = idx_fixture
    gz_path = str(tmp_path / "imgs.gz")
    with open(img_path, "rb") as src, gzip.open(gz_path, "wb") as dst:
        shutil.copyfileobj(src, dst)
    assert np.array_equal(read_idx_images(gz_path), images)


def test_bad_magic_names_offset(tmp_path):
    path = tmp_path / "bad-idx3-ubyte"
    path.write_bytes(b"\x00\x00\x00\x00" + b"\x00" * 12)
    with pytest.raises(IdxFormatError, match="byte offset 0"):
        read_idx_images(str(path))


def test_truncated_pixels(idx_fixture, tmp_path):
    img_path = idx_fixture[0]
    short = tmp_path / "short-idx3-ubyte"
    with open(img_path, "rb") as handle:
        short.write_bytes(handle.read()[:100])
    with pytest.raises(IdxFormatError, match="truncated"):
        read_idx_images(str(short))


def test_find_mnist(idx_fixture, tmp_path):
    data_dir = tmp_path / "mnist"
    data_dir.mkdir()
    shutil.copy(idx_fixture[0], data_dir / "train-images-idx3-ubyte")
    shutil.copy(idx_fixture[1], data_dir / "train-labels-idx1-ubyte")
    images, labels = find_mnist(str(data_dir), "train")
    assert os.path.basename(images) == "train-images-idx3-ubyte"
    with pytest.raises(FileNotFoundError):
        find_mnist(str(data_dir), "test")


def test_synth_blobs_contract():
    data = synth_blobs(k=2, n=3, per_class=5, separation=4.0, seed=0)
    assert len(data) == 10
    assert data.class_counts().tolist() == [5, 5]
    again = synth_blobs(k=2, n=3, per_class=5, separation=4.0, seed=0)
    assert np.array_equal(data.features, again.features)
    assert np.max(np.linalg.norm(data.features, axis=1)) <= data.norm_bound + 1e-12


def test_dataset_rejects_out_of_bound_samples():
    with pytest.raises(InvalidConfigError):
        Dataset(np.array([[2.0, 0.0]]), [0], 2)
    with pytest.raises(InvalidConfigError):
        Dataset(np.array([[0.5, 0.0]]), [3], 2)


def test_subset_fraction_identity(blobs):
    assert subset_fraction(blobs, 1.0, seed=0) is blobs


def test_subset_fraction_stratified():
    data = synth_blobs(k=10, n=2, per_class=100, separation=3.0, seed=1)
    subset = subset_fraction(data, 0.1, seed=4)
    assert subset.class_counts().tolist() == [10] * 10


def test_subset_fraction_unstratified_size(blobs):
    for fraction in (0.05, 0.25, 0.5, 0.9):
        subset = subset_fraction(blobs, fraction, seed=2, stratified=False)
        assert len(subset) == max(1, int(np.floor(fraction * len(blobs) + 0.5)))


def test_subset_keeps_every_class(blobs, caplog):
    subset = subset_fraction(blobs, 0.01, seed=0)
    assert subset.class_counts().tolist() == [1, 1, 1]
    assert "keeping one sample each" in caplog.text


def test_split_holdout(blobs):
    train, val = split_holdout(blobs, 0, seed=1)
    assert len(val) == 0 and len(train) == len(blobs)
    train, val = split_holdout(blobs, 15, seed=1)
    assert len(train) + len(val) == len(blobs)
    rows = {tuple(r) for r in train.features}
    assert not any(tuple(r) in rows for r in val.features)
    with pytest.raises(InvalidConfigError):
        split_holdout(blobs, len(blobs), seed=1)


def test_csv_round_trip(blobs, tmp_path):
    path = export_csv(blobs, str(tmp_path / "blobs.csv"))
    again = import_csv(path)
    assert np.array_equal(again.features, blobs.features)
    assert np.array_equal(again.labels, blobs.labels)
