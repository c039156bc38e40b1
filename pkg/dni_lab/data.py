#!/usr/bin/env python3
"""
Data Module
Artificial dataset generators, 2-D grids for loss-surface experiments and MNIST IDX ingestion

Binary tasks use 2-class one-hot labels throughout. Every generator is a pure function of
its arguments and seed.
"""

import csv
import gzip
import logging
import os
import struct
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import backoff
import numpy as np
import requests

from dni_lab.errors import (
    IdxCountMismatchError,
    IdxMagicError,
    IdxTruncatedError,
    ShapeError,
    ValidationError,
)
from dni_lab.linalg import Matrix, Rng

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
NOISE_RATE = 0.1


@dataclass
class Dataset:
    """Samples as rows of X, one-hot rows of Y and the integer labels"""
    X: Matrix
    Y: Matrix
    labels: np.ndarray
    spec: Dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.X.shape[0]
        if self.Y.shape[0] != n or self.labels.shape[0] != n:
            raise ShapeError("dataset fields disagree on n", self.X.shape, self.Y.shape, self.labels.shape)
        one_hot_entries = np.all((self.Y == 0.0) | (self.Y == 1.0))
        if not (one_hot_entries and np.all(self.Y.sum(axis=1) == 1.0)):
            raise ValidationError("every Y row must be one-hot")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def c(self) -> int:
        return self.Y.shape[1]

    def take(self, indices: Sequence[int], **spec_updates) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        spec = dict(self.spec)
        spec.update(spec_updates)
        return Dataset(self.X[idx].copy(), self.Y[idx].copy(), self.labels[idx].copy(), spec)

    def class_counts(self) -> Dict[int, int]:
        values, counts = np.unique(self.labels, return_counts=True)
        return {int(v): int(c) for v, c in zip(values, counts)}


@dataclass
class GridDataset:
    """Lattice of resolution^2 points over [lo, hi]^2 and its labeling rule"""
    resolution: int
    lo: float
    hi: float
    labeler: str
    dataset: Dataset


def one_hot(labels: np.ndarray, n_classes: int) -> Matrix:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValidationError(f"labels must lie in [0, {n_classes})")
    Y = np.zeros((labels.shape[0], n_classes))
    Y[np.arange(labels.shape[0]), labels] = 1.0
    return Y


def default_size(k: int) -> int:
    return 100 if k <= 2 else 1000


def _check_k(k: int) -> int:
    if int(k) < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    return int(k)


def _hyperplane_labels(X: Matrix, normal: Matrix) -> np.ndarray:
    # points on the plane count as positive
    return (X @ normal >= 0.0).astype(np.int64).ravel()


def _flip(labels: np.ndarray, rng: Rng, rate: float = NOISE_RATE) -> Tuple[np.ndarray, np.ndarray]:
    n_flip = int(np.floor(rate * labels.shape[0]))
    flips = np.sort(rng.choice(labels.shape[0], n_flip, replace=False))
    flipped = labels.copy()
    flipped[flips] = 1 - flipped[flips]
    return flipped, flips


def gen_linear(k: int, seed: int, n_points: Optional[int] = None) -> Dataset:
    """Gaussian inputs labeled by the side of a random origin-crossing hyperplane"""
    k = _check_k(k)
    n = int(n_points or default_size(k))
    rng = Rng(seed)
    X = rng.child(0).gaussian(n, k)
    normal = rng.child(1).gaussian(k, 1)
    labels = _hyperplane_labels(X, normal)
    spec = {"kind": "linear", "k": k, "seed": int(seed), "noise_rate": 0.0, "n": n,
            "normal": normal.ravel().tolist()}
    return Dataset(X, one_hot(labels, 2), labels, spec)


def gen_noisy(k: int, seed: int, n_points: Optional[int] = None) -> Dataset:
    """gen_linear with exactly floor(0.1 n) labels swapped"""
    base = gen_linear(k, seed, n_points)
    labels, flips = _flip(base.labels, Rng(seed).child(2))
    spec = dict(base.spec, kind="noisy", noise_rate=NOISE_RATE, flipped=flips.tolist())
    return Dataset(base.X, one_hot(labels, 2), labels, spec)


def gen_random(k: int, seed: int, n_points: Optional[int] = None) -> Dataset:
    """Gaussian inputs with i.i.d. uniform binary labels"""
    k = _check_k(k)
    n = int(n_points or default_size(k))
    rng = Rng(seed)
    X = rng.child(0).gaussian(n, k)
    labels = rng.child(3).uniform_int(0, 2, n).astype(np.int64)
    spec = {"kind": "random", "k": k, "seed": int(seed), "noise_rate": 1.0, "n": n}
    return Dataset(X, one_hot(labels, 2), labels, spec)


GENERATORS = {"linear": gen_linear, "noisy": gen_noisy, "random": gen_random}


def generate(kind: str, k: int, seed: int, n_points: Optional[int] = None) -> Dataset:
    if kind not in GENERATORS:
        raise ValidationError(f"Unsupported dataset kind: {kind}")
    return GENERATORS[kind](k, seed, n_points)


def grid_2d(resolution: int, lo: float = -2.0, hi: float = 2.0,
            labeler: str = "linear_with_noise", seed: int = 0) -> GridDataset:
    """
    resolution x resolution lattice over [lo, hi]^2

    linear_with_noise: labels from a random line through the origin with floor(0.1 n)
    of them flipped; random: uniform labels.
    """
    if int(resolution) < 2:
        raise ValidationError("grid resolution must be >= 2")
    if not lo < hi:
        raise ValidationError("grid range must satisfy lo < hi")
    resolution = int(resolution)
    axis = np.linspace(lo, hi, resolution)
    xs, ys = np.meshgrid(axis, axis)
    X = np.column_stack([xs.ravel(), ys.ravel()])
    rng = Rng(seed)
    spec = {"kind": "grid", "labeler": labeler, "resolution": resolution, "range": [lo, hi],
            "seed": int(seed), "n": X.shape[0]}
    if labeler == "linear_with_noise":
        labels = _hyperplane_labels(X, rng.child(1).gaussian(2, 1))
        labels, flips = _flip(labels, rng.child(2))
        spec.update(noise_rate=NOISE_RATE, flipped=flips.tolist())
    elif labeler == "random":
        labels = rng.child(3).uniform_int(0, 2, X.shape[0]).astype(np.int64)
    else:
        raise ValidationError(f"Unsupported grid labeler: {labeler}")
    return GridDataset(resolution, float(lo), float(hi), labeler, Dataset(X, one_hot(labels, 2), labels, spec))


def replicate_seeds(seed: int, count: int = 10) -> List[int]:
    return [int(seed) + i for i in range(count)]


def subset(dataset: Dataset, m: int, seed: int) -> Dataset:
    """m samples drawn without replacement, original order kept"""
    if not 0 < m <= dataset.n:
        raise ValidationError(f"subset size must lie in [1, {dataset.n}], got {m}")
    idx = np.sort(Rng(seed).child(5).choice(dataset.n, m, replace=False))
    return dataset.take(idx, subset=int(m), subset_seed=int(seed))


def sample_sorted(dataset: Dataset, per_total: int = 400, seed: int = 0) -> Dataset:
    """A seeded sample ordered by class label (RDM input)"""
    if not 0 < per_total <= dataset.n:
        raise ValidationError(f"sample size must lie in [1, {dataset.n}], got {per_total}")
    idx = Rng(seed).child(6).choice(dataset.n, per_total, replace=False)
    idx = idx[np.argsort(dataset.labels[idx], kind="stable")]
    return dataset.take(idx, sorted_sample=int(per_total), sample_seed=int(seed))


def train_test_split(dataset: Dataset, test_fraction: float, seed: int) -> Tuple[Dataset, Dataset]:
    if not 0.0 < test_fraction < 1.0:
        raise ValidationError("test_fraction must lie in (0, 1)")
    perm = Rng(seed).child(7).permutation(dataset.n)
    n_test = max(1, int(round(test_fraction * dataset.n)))
    return dataset.take(np.sort(perm[n_test:]), split="train"), dataset.take(np.sort(perm[:n_test]), split="test")


# ---------------------------------------------------------------------------
# CSV export
# ---------------------------------------------------------------------------

def save_csv(dataset: Dataset, path: str) -> str:
    """Header x0..x{d-1},label; floats written with repr so they read back exactly"""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    try:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow([f"x{i}" for i in range(dataset.d)] + ["label"])
            for row, label in zip(dataset.X, dataset.labels):
                writer.writerow([repr(float(v)) for v in row] + [int(label)])
    except OSError as e:
        raise OSError(f"Could not write dataset CSV {path}: {e}") from e
    logger.info(f"Dataset saved to {path}")
    return path


def load_csv(path: str, n_classes: Optional[int] = None) -> Dataset:
    try:
        with open(path, "r", newline="", encoding="utf-8") as f:
            rows = list(csv.reader(f))
    except OSError as e:
        raise OSError(f"Could not read dataset CSV {path}: {e}") from e
    if not rows or rows[0][-1] != "label":
        raise ValidationError(f"{path}: expected a header ending in 'label'")
    body = rows[1:]
    X = np.array([[float(v) for v in r[:-1]] for r in body], dtype=np.float64).reshape(len(body), len(rows[0]) - 1)
    labels = np.array([int(r[-1]) for r in body], dtype=np.int64)
    c = n_classes or max(2, int(labels.max()) + 1 if labels.size else 2)
    return Dataset(X, one_hot(labels, c), labels, {"kind": "csv", "path": path, "n": len(body)})


# ---------------------------------------------------------------------------
# MNIST
# ---------------------------------------------------------------------------

def _read_bytes(path: str) -> bytes:
    opener = gzip.open if path.endswith(".gz") else open
    try:
        with opener(path, "rb") as f:
            return f.read()
    except OSError as e:
        raise OSError(f"Could not read IDX file {path}: {e}") from e


def _parse_idx(raw: bytes, expected_magic: int, path: str) -> Tuple[Tuple[int, ...], bytes]:
    if len(raw) < 4:
        raise IdxTruncatedError(f"{path}: file too short for an IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise IdxMagicError(f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxTruncatedError(f"{path}: header promises {ndim} dimensions")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims))
    if len(raw) - header < size:
        raise IdxTruncatedError(f"{path}: payload has {len(raw) - header} bytes, header promises {size}")
    return dims, raw[header:header + size]


def load_mnist(images_path: str, labels_path: str, subset_size: Optional[int] = None, seed: int = 0) -> Dataset:
    """Read an IDX image/label pair (plain or .gz); pixels scaled to [0, 1]"""
    img_dims, img_payload = _parse_idx(_read_bytes(images_path), IDX_IMAGES_MAGIC, images_path)
    lbl_dims, lbl_payload = _parse_idx(_read_bytes(labels_path), IDX_LABELS_MAGIC, labels_path)
    if img_dims[0] != lbl_dims[0]:
        raise IdxCountMismatchError(f"{images_path} has {img_dims[0]} images but {labels_path} has {lbl_dims[0]} labels")
    n = img_dims[0]
    X = np.frombuffer(img_payload, dtype=np.uint8).reshape(n, -1).astype(np.float64) / 255.0
    labels = np.frombuffer(lbl_payload, dtype=np.uint8).astype(np.int64)
    dataset = Dataset(X, one_hot(labels, 10), labels, {"kind": "mnist", "images": images_path, "n": n})
    logger.info(f"Loaded {n} MNIST images from {images_path}")
    if subset_size:
        dataset = subset(dataset, int(subset_size), seed)
    return dataset


def mnist_paths(data_dir: str, split: str = "train") -> Tuple[str, str]:
    """Resolve the standard IDX file names in data_dir, gzipped or not"""
    if split not in MNIST_FILES:
        raise ValidationError(f"split must be one of {list(MNIST_FILES)}")
    resolved = []
    for name in MNIST_FILES[split]:
        candidates = [os.path.join(data_dir, name), os.path.join(data_dir, name + ".gz")]
        found = next((c for c in candidates if os.path.exists(c)), None)
        if found is None:
            raise FileNotFoundError(
                f"MNIST file {name} not found in {data_dir}; "
                f"download it with: python helper_scripts/fetch_mnist.py --dest {data_dir}")
        resolved.append(found)
    return resolved[0], resolved[1]


@backoff.on_exception(
    backoff.expo,
    requests.exceptions.RequestException,
    max_tries=5,
    max_time=300
)
def _download(url: str) -> bytes:
    response = requests.get(url, timeout=60)
    response.raise_for_status()
    expected = response.headers.get("Content-Length")
    if expected is not None and int(expected) != len(response.content):
        raise requests.exceptions.ContentDecodingError(
            f"{url}: received {len(response.content)} bytes, expected {expected}")
    return response.content


def fetch_mnist(base_url: str, dest_dir: str) -> List[str]:
    """Download and gunzip the four standard IDX files; existing files are kept"""
    os.makedirs(dest_dir, exist_ok=True)
    written = []
    for names in MNIST_FILES.values():
        for name in names:
            target = os.path.join(dest_dir, name)
            if os.path.exists(target):
                logger.info(f"{target} already present, skipping")
                written.append(target)
                continue
            url = f"{base_url.rstrip('/')}/{name}.gz"
            logger.info(f"Downloading {url}")
            payload = gzip.decompress(_download(url))
            with open(target, "wb") as f:
                f.write(payload)
            written.append(target)
    return written


def describe(dataset: Dataset) -> str:
    counts = ", ".join(f"{label}: {count}" for label, count in dataset.class_counts().items())
    return f"n={dataset.n} d={dataset.d} classes={{{counts}}}"
