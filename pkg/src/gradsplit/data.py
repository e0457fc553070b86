"""Datasets: CIFAR-10 binary batches, fixed Gaussian noise, noise mixing, synthetic blobs."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, DataFormatError

CIFAR_RECORD = 3073
CIFAR_SHAPE = (3, 32, 32)
CIFAR_CLASSES = 10

# (train, test) counts per named size class
SUBSET_SIZES = {
    "2.5k": (2560, 2560),
    "5k": (5120, 5120),
    "10k": (10240, 10000),
}

DEFAULT_NOISE_SIGMA = 0.25

_CACHE_MAGIC = b"GSDS"
_CACHE_VERSION = 1


@dataclass(eq=False)
class LabeledDataset:
    inputs: np.ndarray
    labels: np.ndarray
    name: str = ""
    provenance: str = "synthetic_blobs"
    class_count: int = 10
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise DataError(f"{self.inputs.shape[0]} inputs but {self.labels.shape[0]} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise DataError(f"labels must lie in [0, {self.class_count})")

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def sample_shape(self) -> tuple[int, ...]:
        return tuple(self.inputs.shape[1:])

    def take(self, index, name: str | None = None) -> "LabeledDataset":
        index = np.asarray(index)
        return LabeledDataset(self.inputs[index], self.labels[index], name or self.name,
                              self.provenance, self.class_count, dict(self.meta))

    def head(self, n: int, name: str | None = None) -> "LabeledDataset":
        if n > len(self):
            raise ConfigError(f"asked for {n} samples from {self.name or 'dataset'} of size {len(self)}")
        return self.take(np.arange(n), name)

    def summary(self) -> dict:
        return {"name": self.name, "provenance": self.provenance, "size": len(self),
                "sample_shape": list(self.sample_shape), "class_count": self.class_count}


@dataclass(frozen=True)
class SplitSpec:
    train_count: int
    test_count: int
    source: str = "disjoint_train_test"  # or "train_halved"

    def __post_init__(self):
        if self.train_count < 1 or self.test_count < 1:
            raise ConfigError("split counts must be positive")
        if self.source not in ("disjoint_train_test", "train_halved"):
            raise ConfigError(f"unknown split source {self.source!r}")


# -- CIFAR-10 ------------------------------------------------------------------

def _read_cifar_file(path: Path) -> tuple[np.ndarray, np.ndarray]:
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size % CIFAR_RECORD:
        raise DataFormatError(f"{path}: {raw.size} bytes is not a multiple of {CIFAR_RECORD}")
    records = raw.reshape(-1, CIFAR_RECORD)
    labels = records[:, 0].astype(np.int64)
    if labels.size and labels.max() >= CIFAR_CLASSES:
        raise DataError(f"{path}: label byte {labels.max()} >= {CIFAR_CLASSES}")
    pixels = records[:, 1:].reshape(-1, *CIFAR_SHAPE).astype(np.float64) / 255.0
    return pixels, labels


def load_cifar10(path) -> LabeledDataset:
    """Load one CIFAR-10 binary batch file, or all ``data_batch_*.bin`` in a directory.

    Record order is preserved; pixels are scaled to [0, 1].
    """
    path = Path(path)
    files = sorted(path.glob("data_batch_*.bin")) if path.is_dir() else [path]
    if not files:
        raise DataFormatError(f"no data_batch_*.bin files in {path}")
    parts = [_read_cifar_file(f) for f in files]
    inputs = np.concatenate([p[0] for p in parts])
    labels = np.concatenate([p[1] for p in parts])
    return LabeledDataset(inputs, labels, path.stem, "cifar_subset", CIFAR_CLASSES)


def load_cifar10_split(directory) -> tuple[LabeledDataset, LabeledDataset]:
    directory = Path(directory)
    train = load_cifar10(directory)
    test = load_cifar10(directory / "test_batch.bin")
    train.name, test.name = "cifar10-train", "cifar10-test"
    return train, test


def write_cifar10(path, images_u8: np.ndarray, labels) -> None:
    """Write uint8 (N, 3, 32, 32) images and labels as a CIFAR-10 binary batch."""
    images_u8 = np.asarray(images_u8, dtype=np.uint8).reshape(len(labels), -1)
    records = np.concatenate([np.asarray(labels, dtype=np.uint8)[:, None], images_u8], axis=1)
    records.tofile(Path(path))


def make_subsets(ds_train: LabeledDataset, ds_test: LabeledDataset | None,
                 spec: SplitSpec | None = None, size_class: str | None = None,
                 ) -> tuple[LabeledDataset, LabeledDataset]:
    """Prefix subsets in stored order.

    ``size_class`` picks counts from :data:`SUBSET_SIZES` (overriding the
    counts in ``spec``).  With ``source="train_halved"`` both halves come
    from ``ds_train``: its first ``train_count`` samples, then the next
    ``test_count``.
    """
    if spec is None and size_class is None:
        raise ConfigError("make_subsets needs a SplitSpec or a size class")
    source = spec.source if spec else "disjoint_train_test"
    if size_class is not None:
        if size_class not in SUBSET_SIZES:
            raise ConfigError(f"unknown size class {size_class!r}")
        n_train, n_test = SUBSET_SIZES[size_class]
    else:
        n_train, n_test = spec.train_count, spec.test_count
    tag = f"-{size_class}" if size_class else ""
    if source == "train_halved":
        if n_train + n_test > len(ds_train):
            raise ConfigError(f"train_halved needs {n_train + n_test} samples, have {len(ds_train)}")
        train = ds_train.take(np.arange(n_train), f"{ds_train.name}{tag}-train")
        test = ds_train.take(np.arange(n_train, n_train + n_test), f"{ds_train.name}{tag}-heldout")
        return train, test
    if ds_test is None:
        raise ConfigError("disjoint_train_test split needs a test dataset")
    return (ds_train.head(n_train, f"{ds_train.name}{tag}"),
            ds_test.head(n_test, f"{ds_test.name}{tag}"))


# -- synthetic data ------------------------------------------------------------

def gaussian_noise_dataset(shape, n: int, class_count: int = 10, sigma: float = DEFAULT_NOISE_SIGMA,
                           seed: int = 0, clip: bool = True) -> LabeledDataset:
    """Fixed noise images ~ Normal(0.5, sigma), clipped to [0, 1], with round-robin labels."""
    if n < class_count:
        raise ConfigError(f"need at least one sample per class ({class_count}), got n={n}")
    if sigma < 0:
        raise ConfigError(f"sigma must be nonnegative, got {sigma}")
    shape = tuple(int(s) for s in shape)
    rng = np.random.default_rng(seed)
    inputs = 0.5 + sigma * rng.standard_normal((n, *shape))
    if clip:
        np.clip(inputs, 0.0, 1.0, out=inputs)
    labels = np.arange(n) % class_count
    return LabeledDataset(inputs, labels, f"noise-{n}-s{seed}", "gaussian_noise", class_count,
                          {"seed": seed, "sigma": sigma})


def mix_noise(ds: LabeledDataset, fraction: float, sigma: float = DEFAULT_NOISE_SIGMA,
              seed: int = 0) -> LabeledDataset:
    """Replace ``round(fraction * N)`` randomly chosen inputs with fixed noise images.

    Sample ``i``'s replacement is row ``i`` of the matching
    :func:`gaussian_noise_dataset`, so ``fraction=1`` reproduces it exactly.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ConfigError(f"fraction must lie in [0, 1], got {fraction}")
    n = len(ds)
    count = int(np.floor(fraction * n + 0.5))
    picker = np.random.default_rng([seed, 1])
    replaced = np.sort(picker.choice(n, size=count, replace=False))
    inputs = ds.inputs.copy()
    if count:
        noise = 0.5 + sigma * np.random.default_rng(seed).standard_normal(ds.inputs.shape)
        np.clip(noise, 0.0, 1.0, out=noise)
        inputs[replaced] = noise[replaced]
    meta = dict(ds.meta, noise_fraction=fraction, noise_seed=seed, sigma=sigma, replaced=replaced.tolist())
    return LabeledDataset(inputs, ds.labels.copy(), f"{ds.name}+noise{fraction:g}", "mixed",
                          ds.class_count, meta)


def synthetic_blobs(n: int, class_count: int = 10, dim: int = 32, separation: float = 10.0,
                    seed: int = 0, sigma: float = 1.0, intrinsic_dim: int | None = None) -> LabeledDataset:
    """Gaussian clusters, one per class, with pairwise mean distance ``separation``.

    Class ``c`` is centred at ``separation / sqrt(2) * e_c``.  Within-class
    spread is isotropic with per-coordinate std ``sigma``, or, with
    ``intrinsic_dim = r``, confined to a fixed r-dimensional subspace with
    std ``sigma`` along each of its orthonormal axes (a low-rank covariance,
    closer to how natural images occupy pixel space).  Means and subspace do
    not depend on ``seed``, so different seeds give i.i.d. draws from one
    distribution.  Labels are round-robin.
    """
    if separation < 0:
        raise ConfigError(f"separation must be nonnegative, got {separation}")
    if dim < class_count:
        raise ConfigError(f"dim ({dim}) must be >= class_count ({class_count})")
    if intrinsic_dim is not None and not 1 <= intrinsic_dim <= dim:
        raise ConfigError(f"intrinsic_dim must lie in [1, {dim}], got {intrinsic_dim}")
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % class_count
    means = np.zeros((class_count, dim))
    means[np.arange(class_count), np.arange(class_count)] = separation / np.sqrt(2.0)
    if intrinsic_dim is None:
        spread = rng.standard_normal((n, dim))
    else:
        basis = blob_subspace(dim, intrinsic_dim)
        spread = rng.standard_normal((n, intrinsic_dim)) @ basis.T
    inputs = means[labels] + sigma * spread
    return LabeledDataset(inputs, labels, f"blobs-{n}-s{seed}", "synthetic_blobs", class_count,
                          {"seed": seed, "sigma": sigma, "separation": separation,
                           "intrinsic_dim": intrinsic_dim})


def blob_subspace(dim: int, rank: int) -> np.ndarray:
    """Fixed (dim, rank) matrix with orthonormal columns; independent of any data seed."""
    q, _ = np.linalg.qr(np.random.default_rng([dim, rank, 29]).standard_normal((dim, rank)))
    return q


# -- cache container -------------------------------------------------------------

def save_dataset(ds: LabeledDataset, path) -> None:
    """Layout: magic, u32 header length, JSON header, float64 inputs, int64 labels (little endian)."""
    meta = dict(ds.meta)
    header = {"version": _CACHE_VERSION, "name": ds.name, "provenance": ds.provenance,
              "class_count": ds.class_count, "shape": list(ds.inputs.shape),
              "seed": ds.meta.get("seed"), "sigma": ds.meta.get("sigma"), "meta": meta}
    blob = json.dumps(header, sort_keys=True).encode()
    with open(Path(path), "wb") as fh:
        fh.write(_CACHE_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(ds.inputs.astype("<f8").tobytes())
        fh.write(ds.labels.astype("<i8").tobytes())


def load_dataset(path) -> LabeledDataset:
    raw = Path(path).read_bytes()
    if raw[:4] != _CACHE_MAGIC:
        raise DataFormatError(f"{path}: not a dataset cache file")
    (hlen,) = struct.unpack("<I", raw[4:8])
    header = json.loads(raw[8:8 + hlen])
    if header["version"] != _CACHE_VERSION:
        raise DataFormatError(f"{path}: unsupported cache version {header['version']}")
    shape = tuple(header["shape"])
    count = int(np.prod(shape))
    body = 8 + hlen
    if len(raw) != body + 8 * count + 8 * shape[0]:
        raise DataFormatError(f"{path}: body length does not match header shape {shape}")
    inputs = np.frombuffer(raw, dtype="<f8", count=count, offset=body).reshape(shape)
    labels = np.frombuffer(raw, dtype="<i8", count=shape[0], offset=body + 8 * count)
    return LabeledDataset(inputs.astype(np.float64), labels.astype(np.int64), header["name"],
                          header["provenance"], header["class_count"], header["meta"])
