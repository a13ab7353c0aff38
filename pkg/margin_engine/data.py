"""Datasets: MNIST IDX ingestion, synthetic blobs, subsets and splits.

Every Dataset lives in the bounded-norm domain: ``norm_bound`` (B) is an
upper bound on the l2 norm of every feature vector. Loaders scale the data
so that the largest sample norm is exactly B = 1.
"""

import csv
import gzip
import logging
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, EmptyInputError, IdxFormatError, InvalidConfigError

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}

_NORM_SLACK = 1e-12


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray  # (m, n)
    labels: np.ndarray  # (m,) ints in [0, k)
    k: int
    norm_bound: float = 1.0

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if features.ndim != 2:
            raise DimensionError(f"features must be (m, n), got shape {features.shape}")
        if labels.shape != (features.shape[0],):
            raise DimensionError(
                f"{features.shape[0]} feature rows but {labels.shape[0]} labels"
            )
        if labels.size and (labels.min() < 0 or labels.max() >= self.k):
            raise InvalidConfigError(f"labels must lie in [0, {self.k})")
        if features.size and np.max(np.linalg.norm(features, axis=1)) > self.norm_bound + _NORM_SLACK:
            raise InvalidConfigError(f"a sample exceeds the declared norm bound B={self.norm_bound}")
        features.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.features.shape[0]

    @property
    def n(self) -> int:
        return self.features.shape[1]

    def take(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[indices], self.labels[indices], self.k, self.norm_bound)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.k)


def normalize_unit_ball(features: np.ndarray) -> np.ndarray:
    """Scale all samples by one factor so the largest norm is 1."""
    features = np.asarray(features, dtype=np.float64)
    if features.size == 0:
        return features
    largest = float(np.max(np.linalg.norm(features, axis=1)))
    if largest == 0.0:
        return features
    scaled = features / largest
    # rounding can leave the largest norm a hair above 1
    norms = np.linalg.norm(scaled, axis=1)
    top = int(np.argmax(norms))
    if norms[top] > 1.0:
        scaled[top] /= norms[top]
    return scaled


def _open(path):
    return gzip.open(path, "rb") if path.endswith(".gz") else open(path, "rb")


def _read_header(raw: bytes, expected_magic: int, ndims: int, path: str):
    header_len = 4 * (1 + ndims)
    if len(raw) < 4:
        raise IdxFormatError(f"{path}: file too short for an IDX magic number", offset=len(raw))
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise IdxFormatError(
            f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}", offset=0
        )
    if len(raw) < header_len:
        raise IdxFormatError(f"{path}: truncated IDX header", offset=len(raw))
    dims = struct.unpack(">" + "I" * ndims, raw[4:header_len])
    return dims, header_len


def read_idx_images(path: str) -> np.ndarray:
    with _open(path) as handle:
        raw = handle.read()
    (count, rows, cols), offset = _read_header(raw, IDX_IMAGES_MAGIC, 3, path)
    expected = count * rows * cols
    if len(raw) - offset < expected:
        raise IdxFormatError(
            f"{path}: truncated pixel data, expected {expected} bytes", offset=len(raw)
        )
    pixels = np.frombuffer(raw, dtype=np.uint8, count=expected, offset=offset)
    return pixels.reshape(count, rows, cols)


def read_idx_labels(path: str) -> np.ndarray:
    with _open(path) as handle:
        raw = handle.read()
    (count,), offset = _read_header(raw, IDX_LABELS_MAGIC, 1, path)
    if len(raw) - offset < count:
        raise IdxFormatError(f"{path}: truncated label data, expected {count} bytes", offset=len(raw))
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=offset).copy()


def write_idx(images: np.ndarray, labels, images_path: str, labels_path: str) -> None:
    """Write uint8 images (count, rows, cols) and labels in IDX format."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    count, rows, cols = images.shape
    with open(images_path, "wb") as handle:
        handle.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, count, rows, cols))
        handle.write(images.tobytes(order="C"))
    with open(labels_path, "wb") as handle:
        handle.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0]))
        handle.write(labels.tobytes())


def load_idx(images_path: str, labels_path: str, k: int = 10) -> Dataset:
    """Load an IDX image/label pair, scale pixels to [0, 1], then to B = 1."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(
            f"{images.shape[0]} images in {images_path} but {labels.shape[0]} labels in {labels_path}"
        )
    features = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    k = max(int(k), int(labels.max()) + 1 if labels.size else 0)
    logger.info("loaded %d samples of dim %d from %s", features.shape[0], features.shape[1], images_path)
    return Dataset(normalize_unit_ball(features), labels, k, 1.0)


def find_mnist(data_dir: str, split: str = "train"):
    """Return the (images, labels) paths of an MNIST split under ``data_dir``."""
    names = MNIST_FILES[split]
    paths = []
    for name in names:
        for candidate in (name, name + ".gz", name.replace("-idx", ".idx")):
            path = os.path.join(data_dir, candidate)
            if os.path.exists(path):
                paths.append(path)
                break
        else:
            raise FileNotFoundError(f"{name} not found in {data_dir}")
    return tuple(paths)


def synth_blobs(k: int, n: int, per_class: int, separation: float, seed: int) -> Dataset:
    """k Gaussian clusters with unit-variance noise around centers at distance
    ``separation`` from the origin, class-major order, unit-ball normalised."""
    if k < 2:
        raise InvalidConfigError("synth_blobs needs at least two classes")
    if per_class < 1 or n < 1:
        raise InvalidConfigError("per_class and n must be >= 1")
    rng = np.random.default_rng(seed)
    directions = rng.standard_normal((k, n))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    centers = separation * directions
    features = np.concatenate(
        [centers[c] + rng.standard_normal((per_class, n)) for c in range(k)]
    )
    labels = np.repeat(np.arange(k), per_class)
    return Dataset(normalize_unit_ball(features), labels, k, 1.0)


def _round_half_up(value: float) -> int:
    return int(np.floor(value + 0.5))


def _stratified_quotas(counts: np.ndarray, fraction: float) -> np.ndarray:
    present = counts > 0
    raw = fraction * counts
    quotas = np.floor(raw).astype(np.int64)
    target = _round_half_up(fraction * counts.sum())
    remainder = target - int(quotas.sum())
    if remainder > 0:
        # largest remainders first, lowest class index on ties
        order = sorted(np.flatnonzero(present), key=lambda c: (-(raw[c] - quotas[c]), c))
        for c in order[:remainder]:
            quotas[c] += 1
    starved = present & (quotas == 0)
    if starved.any():
        logger.warning(
            "fraction %.6g would drop classes %s; keeping one sample each",
            fraction, np.flatnonzero(starved).tolist(),
        )
        quotas[starved] = 1
    return quotas


def subset_fraction(data: Dataset, fraction: float, seed: int, stratified: bool = True) -> Dataset:
    """Random subset of round(fraction * m) samples in original order."""
    if not 0.0 < fraction <= 1.0:
        raise InvalidConfigError(f"fraction must lie in (0, 1], got {fraction}")
    if len(data) == 0:
        raise EmptyInputError("cannot subset an empty dataset")
    if fraction == 1.0:
        return data
    rng = np.random.default_rng(seed)
    if stratified:
        quotas = _stratified_quotas(data.class_counts(), fraction)
        chosen = []
        for c in range(data.k):
            members = np.flatnonzero(data.labels == c)
            if quotas[c]:
                chosen.append(rng.permutation(members)[: quotas[c]])
        indices = np.sort(np.concatenate(chosen))
    else:
        size = max(1, _round_half_up(fraction * len(data)))
        indices = np.sort(rng.choice(len(data), size=size, replace=False))
    logger.debug("subset fraction %.6g -> %d of %d samples", fraction, indices.size, len(data))
    return data.take(indices)


def split_holdout(data: Dataset, holdout: int, seed: int):
    """Disjoint (train, validation) split with ``holdout`` validation samples."""
    if holdout < 0 or holdout >= len(data):
        raise InvalidConfigError(f"holdout {holdout} must be in [0, {len(data)})")
    perm = np.random.default_rng(seed).permutation(len(data))
    validation = np.sort(perm[:holdout])
    train = np.sort(perm[holdout:])
    return data.take(train), data.take(validation)


def export_csv(data: Dataset, path: str) -> str:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["label"] + [f"f{j}" for j in range(data.n)])
        for label, row in zip(data.labels, data.features):
            writer.writerow([int(label)] + [repr(float(v)) for v in row])
    return path


def import_csv(path: str, k: int = None, norm_bound: float = 1.0) -> Dataset:
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if not header or header[0] != "label":
            raise InvalidConfigError(f"{path}: expected a 'label, f0, ...' header")
        rows = [row for row in reader if row]
    if not rows:
        raise EmptyInputError(f"{path} holds no samples")
    labels = np.array([int(row[0]) for row in rows])
    features = np.array([[float(v) for v in row[1:]] for row in rows])
    k = int(k) if k is not None else int(labels.max()) + 1
    return Dataset(features, labels, k, norm_bound)
