"""Datasets: IDX parsing, subsampling, batch order, synthetic problems.

Image datasets are stored in the classic IDX layout (big-endian header,
ubyte payload), optionally gzipped. The dataset root is taken from the
SPECTRAL_DAMP_DATA_DIR environment variable so runs stay reproducible
without hard-coded paths; it defaults to ./data.
"""

from __future__ import annotations

import gzip
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

DATA_DIR_ENV = "SPECTRAL_DAMP_DATA_DIR"

_IDX_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass(frozen=True)
class Dataset:
    """Flattened design matrix plus integer labels.

    x : (N, d) float64, finite, images already scaled to [0, 1].
    y : (N,) int64 labels in [0, n_classes).
    """

    x: np.ndarray
    y: np.ndarray
    n_classes: int
    name: str = "dataset"

    def __post_init__(self) -> None:
        if self.x.ndim != 2 or self.y.ndim != 1 or len(self.x) != len(self.y):
            raise ValueError(f"inconsistent shapes x{self.x.shape} y{self.y.shape}")
        if not np.all(np.isfinite(self.x)):
            raise ValueError("non-finite feature values")
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= self.n_classes):
            raise ValueError("labels outside [0, n_classes)")

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def dim(self) -> int:
        return self.x.shape[1]


def _read_bytes(path: Path) -> bytes:
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as fh:
            return fh.read()
    return path.read_bytes()


def load_idx(path: str | Path) -> np.ndarray:
    """Parse one IDX file (gzipped or raw).

    Image payloads (magic 0x803) come back as float64 scaled to [0, 1]
    with shape (N, rows, cols); label payloads (magic 0x801) as int64.
    """
    path = Path(path)
    raw = _read_bytes(path)
    if len(raw) < 4:
        raise ValueError(f"{path}: truncated IDX header")
    magic = int.from_bytes(raw[:4], "big")
    if magic == IMAGES_MAGIC:
        ndim = 3
    elif magic == LABELS_MAGIC:
        ndim = 1
    else:
        raise ValueError(f"{path}: unsupported IDX magic {magic:#010x}")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise ValueError(f"{path}: truncated IDX dimension header")
    dims = [int.from_bytes(raw[4 + 4 * i : 8 + 4 * i], "big") for i in range(ndim)]
    count = int(np.prod(dims))
    payload = np.frombuffer(raw, dtype=np.uint8, offset=header)
    if payload.size != count:
        raise ValueError(
            f"{path}: payload holds {payload.size} bytes, header promises {count}"
        )
    arr = payload.reshape(dims)
    if magic == IMAGES_MAGIC:
        return arr.astype(np.float64) / 255.0
    return arr.astype(np.int64)


def resolve_data_dir(root: str | Path | None = None) -> Path:
    if root is not None:
        return Path(root)
    return Path(os.environ.get(DATA_DIR_ENV, "data"))


def _find_idx(directory: Path, stem: str) -> Path:
    for candidate in (directory / stem, directory / (stem + ".gz")):
        if candidate.exists():
            return candidate
    raise FileNotFoundError(
        f"missing IDX file {stem}[.gz] under {directory}; place the dataset "
        f"there or point {DATA_DIR_ENV} at the dataset root"
    )


def load_idx_pair(directory: Path, split: str, name: str) -> Dataset:
    if split not in _IDX_FILES:
        raise ValueError(f"unknown split {split!r}, expected train or test")
    img_stem, lab_stem = _IDX_FILES[split]
    images = load_idx(_find_idx(directory, img_stem))
    labels = load_idx(_find_idx(directory, lab_stem))
    if len(images) != len(labels):
        raise ValueError(f"{directory}: image/label count mismatch")
    x = images.reshape(len(images), -1)
    return Dataset(x=x, y=labels, n_classes=10, name=f"{name}-{split}")


def load_mnist(split: str = "train", root: str | Path | None = None) -> Dataset:
    return load_idx_pair(resolve_data_dir(root) / "mnist", split, "mnist")


def load_fashion(split: str = "train", root: str | Path | None = None) -> Dataset:
    return load_idx_pair(resolve_data_dir(root) / "fashion", split, "fashion")


def subsample(ds: Dataset, n: int, seed: int, stratified: bool = True) -> Dataset:
    """Draw ``n`` examples without replacement, deterministically in ``seed``.

    Stratified mode keeps class proportions within rounding of the
    source; remaining slots after the proportional floor go to the
    classes with the largest fractional remainders.
    """
    if not 0 < n <= ds.n:
        raise ValueError(f"cannot draw {n} of {ds.n} examples")
    rng = np.random.default_rng(seed)
    if not stratified:
        idx = rng.choice(ds.n, size=n, replace=False)
    else:
        counts = np.bincount(ds.y, minlength=ds.n_classes)
        exact = counts * (n / ds.n)
        take = np.floor(exact).astype(int)
        remainder = exact - take
        short = n - take.sum()
        for c in np.argsort(remainder)[::-1][:short]:
            take[c] += 1
        take = np.minimum(take, counts)
        # rounding against small classes can leave a shortfall; top up anywhere
        deficit = n - take.sum()
        if deficit > 0:
            room = np.flatnonzero(counts - take > 0)
            for c in room[np.argsort(counts[room] - take[room])[::-1][:deficit]]:
                take[c] += 1
        parts = []
        for c in range(ds.n_classes):
            members = np.flatnonzero(ds.y == c)
            parts.append(rng.choice(members, size=take[c], replace=False))
        idx = np.concatenate(parts)
    idx = idx[rng.permutation(len(idx))]
    return Dataset(
        x=ds.x[idx], y=ds.y[idx], n_classes=ds.n_classes, name=f"{ds.name}-sub{n}"
    )


def standardize(train: Dataset, test: Dataset) -> tuple[Dataset, Dataset]:
    """Center and scale both splits by the train split's global mean/std.

    One scalar mean and one scalar std over every training pixel,
    applied identically to the test split. Per-pixel statistics are
    deliberately avoided: blank image borders have zero variance.
    """
    mu = float(train.x.mean())
    sd = float(train.x.std())
    if sd <= 0.0:
        raise ValueError("degenerate feature scale, cannot standardize")

    def _apply(ds: Dataset) -> Dataset:
        return Dataset(
            x=(ds.x - mu) / sd, y=ds.y, n_classes=ds.n_classes, name=f"{ds.name}-std"
        )

    return _apply(train), _apply(test)


@dataclass(frozen=True)
class BatchSampler:
    """Deterministic batch index streams, one permutation per epoch.

    batch_size None means a single full batch per epoch.
    """

    n: int
    batch_size: int | None = None
    seed: int = 0
    shuffle: bool = True
    drop_last: bool = False

    def epoch_batches(self, epoch: int) -> list[np.ndarray]:
        if self.batch_size is None:
            return [np.arange(self.n)]
        order = np.arange(self.n)
        if self.shuffle:
            order = np.random.default_rng([self.seed, epoch]).permutation(self.n)
        batches = [
            order[i : i + self.batch_size] for i in range(0, self.n, self.batch_size)
        ]
        if self.drop_last and len(batches) > 1 and len(batches[-1]) < self.batch_size:
            batches.pop()
        return batches


def sample_batches(
    ds: Dataset, n_batches: int, batch_size: int, seed: int
) -> list[np.ndarray]:
    """Independent index batches (without replacement inside each batch)."""
    if batch_size > ds.n:
        raise ValueError(f"batch_size {batch_size} exceeds dataset size {ds.n}")
    rng = np.random.default_rng(seed)
    return [rng.choice(ds.n, size=batch_size, replace=False) for _ in range(n_batches)]


def synthetic_quadratic(spectrum: np.ndarray, seed: int) -> np.ndarray:
    """Symmetric matrix with the given nonnegative spectrum in a random basis."""
    spectrum = np.asarray(spectrum, dtype=np.float64)
    if spectrum.ndim != 1 or spectrum.size == 0:
        raise ValueError("spectrum must be a nonempty vector")
    if np.any(spectrum < 0):
        raise ValueError("quadratic spectrum must be nonnegative")
    p = spectrum.size
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.normal(size=(p, p)))
    h = (q * spectrum) @ q.T
    return 0.5 * (h + h.T)


def synthetic_blobs(
    n: int,
    dim: int,
    n_classes: int,
    seed: int,
    separation: float = 1.0,
) -> Dataset:
    """Gaussian class blobs, balanced labels; a stand-in classification set."""
    rng = np.random.default_rng(seed)
    means = rng.normal(0.0, separation, size=(n_classes, dim))
    y = np.arange(n) % n_classes
    x = means[y] + rng.normal(0.0, 1.0, size=(n, dim))
    perm = rng.permutation(n)
    return Dataset(
        x=x[perm], y=y[perm].astype(np.int64), n_classes=n_classes, name="synthetic"
    )
