import os

import numpy as np
import pytest

from margin_engine.data import Dataset, synth_blobs, write_idx
from margin_engine.network import NetworkParams, init_params


@pytest.fixture(autouse=True)
def isolated_env(tmp_path, monkeypatch):
    monkeypatch.setenv("MARGIN_ENGINE_OUTPUT_DIR", str(tmp_path / "runs"))
    monkeypatch.setenv("MARGIN_ENGINE_DATA_DIR", str(tmp_path / "data"))
    monkeypatch.setenv("MARGIN_ENGINE_REGISTRY", "0")
    monkeypatch.chdir(tmp_path)


@pytest.fixture
def blobs():
    return synth_blobs(k=3, n=5, per_class=20, separation=6.0, seed=11)


@pytest.fixture
def small_net():
    return init_params([5, 8, 6, 3], seed=3)


@pytest.fixture
def identity_net():
    return NetworkParams((np.eye(4),))


@pytest.fixture
def random_dataset():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((40, 5))
    x /= np.max(np.linalg.norm(x, axis=1))
    return Dataset(x, rng.integers(0, 3, size=40), 3)


@pytest.fixture
def idx_fixture(tmp_path):
    """Two 28x28 images and their labels written as IDX files."""
    images = np.zeros((2, 28, 28), dtype=np.uint8)
    images[0, 3, 4] = 255
    images[1, 10, 10:20] = 128
    labels = np.array([7, 2], dtype=np.uint8)
    img_path = os.path.join(tmp_path, "imgs-idx3-ubyte")
    lbl_path = os.path.join(tmp_path, "lbls-idx1-ubyte")
    write_idx(images, labels, img_path, lbl_path)
    return img_path, lbl_path, images, labels


def jacobi_singular_values(m, sweeps=100):
    """One-sided Jacobi SVD; independent of power iteration."""
    a = np.array(m, dtype=np.float64, copy=True)
    n = a.shape[1]
    for _ in range(sweeps):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = float(a[:, p] @ a[:, p])
                beta = float(a[:, q] @ a[:, q])
                gamma = float(a[:, p] @ a[:, q])
                if abs(gamma) <= 1e-15 * np.sqrt(alpha * beta) or gamma == 0.0:
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = np.sign(zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta)) if zeta != 0 else 1.0
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                ap = a[:, p].copy()
                a[:, p] = c * ap - s * a[:, q]
                a[:, q] = s * ap + c * a[:, q]
        if not rotated:
            break
    return np.sort(np.linalg.norm(a, axis=0))[::-1]
