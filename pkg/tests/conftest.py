import gzip
import os
import struct

import numpy as np
import pytest

from dni_lab.data import gen_linear, one_hot
from dni_lab.linalg import Rng
from dni_lab.trainer import NetworkSpec, TrainConfig


@pytest.fixture
def rng():
    return Rng(1234)


@pytest.fixture
def linear2():
    return gen_linear(2, seed=7)


@pytest.fixture
def small_batch():
    """8 samples, 3 features, 2 one-hot classes"""
    rng = Rng(5)
    X = rng.child(0).gaussian(8, 3)
    labels = np.array([0, 1, 1, 0, 1, 0, 0, 1])
    return X, one_hot(labels, 2), labels


@pytest.fixture
def tiny_config():
    return TrainConfig(iterations=20, batch_size=16, lr_main=1e-3, lr_sg=1e-3, seed=3, log_every=5)


@pytest.fixture
def mlp_spec():
    return NetworkSpec((2, 6, 5, 2), activation="relu", loss="mse", method="sg", sg_insertions="single")


def write_idx(path, magic, dims, payload, compress=False):
    raw = struct.pack(">I", magic) + struct.pack(f">{len(dims)}I", *dims) + bytes(payload)
    opener = gzip.open if compress else open
    with opener(path, "wb") as f:
        f.write(raw)
    return str(path)


@pytest.fixture
def mnist_like(tmp_path):
    """Six 4x4 'images' with labels 0..5 in the standard IDX file names"""
    images = np.arange(6 * 16, dtype=np.uint8).reshape(6, 16)
    labels = np.arange(6, dtype=np.uint8)
    write_idx(tmp_path / "train-images-idx3-ubyte", 0x00000803, (6, 4, 4), images.tobytes())
    write_idx(tmp_path / "train-labels-idx1-ubyte", 0x00000801, (6,), labels.tobytes())
    write_idx(tmp_path / "t10k-images-idx3-ubyte.gz", 0x00000803, (2, 4, 4), images[:2].tobytes(), compress=True)
    write_idx(tmp_path / "t10k-labels-idx1-ubyte.gz", 0x00000801, (2,), labels[:2].tobytes(), compress=True)
    return tmp_path


@pytest.fixture
def mnist_dir():
    data_dir = os.getenv("MNIST_DATA_DIR")
    if not data_dir or not os.path.isdir(data_dir):
        pytest.skip("MNIST_DATA_DIR is not set")
    return data_dir
