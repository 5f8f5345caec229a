"""IDX datasets, synthetic 2-D problems and additive Gaussian noise."""

from __future__ import annotations

import csv
import gzip
import hashlib
import math
import os
import shutil
import struct
import urllib.request
from dataclasses import dataclass

import numpy as np

from .numerics import RngStream

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}

# SHA-256 of the decompressed IDX files
MNIST_SHA256 = {
    "train_images": "ba891046e6505d7aadcbbe25680a0738ad16aec93bde7f9b65e87a2fc25776db",
    "train_labels": "65a50cbbf4e906d70832878ad85ccda5333a97f0f4c3dd2ef09a8a9eef7101c5",
    "test_images": "0fa7898d509279e482958e8ce81c8e77db3f2f8254e26661ceb7762c4d494ce7",
    "test_labels": "ff7bcfd416de33731a308c3f266cc351222c34898ecbeaf847f06e48f7ec33f2",
}

MNIST_MIRRORS = [
    "https://ossci-datasets.s3.amazonaws.com/mnist/",
    "https://storage.googleapis.com/cvdf-datasets/mnist/",
]

DATA_ENV = "CHAOSNET_DATA"


def default_data_dir():
    return os.environ.get(DATA_ENV) or os.path.expanduser("~/data/mnist")


class IdxParseError(ValueError):
    def __init__(self, message, offset, path=None):
        where = f"{path}: " if path else ""
        super().__init__(f"{where}{message} at byte offset {offset}")
        self.offset = offset
        self.path = path


class IdxMagicError(IdxParseError):
    pass


class IdxTruncatedError(IdxParseError):
    pass


class IdxCountMismatchError(IdxParseError):
    pass


class DataError(RuntimeError):
    pass


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray  # samples x features in [0, 1]
    labels: np.ndarray
    n_classes: int
    name: str = ""

    def __post_init__(self):
        if len(self.inputs) != len(self.labels):
            raise ValueError("inputs and labels differ in length")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError("labels outside [0, n_classes)")
        if not np.all(np.isfinite(self.inputs)):
            raise ValueError("inputs contain non-finite values")

    def __len__(self):
        return len(self.labels)

    @property
    def content_hash(self):
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.inputs, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.labels, dtype="<i8").tobytes())
        h.update(struct.pack("<qq", self.n_classes, self.inputs.shape[-1] if self.inputs.ndim > 1 else 1))
        return h.hexdigest()

    def subset(self, n, seed=None):
        """First ``n`` samples, or a seeded random draw without replacement."""
        if n is None or n >= len(self):
            return self
        if seed is None:
            idx = np.arange(n)
        else:
            idx = np.sort(RngStream(seed, 11).generator().choice(len(self), n, replace=False))
        return Dataset(self.inputs[idx], self.labels[idx], self.n_classes, f"{self.name}[:{n}]")

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"f{i}" for i in range(self.inputs.shape[1])] + ["label"])
            for x, y in zip(self.inputs, self.labels):
                w.writerow([repr(float(v)) for v in x] + [int(y)])


def _read_bytes(path):
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as fh:
        return fh.read()


def parse_idx(buf, expected_magic, path=None):
    """Decode one IDX buffer into a uint8 array of the header's shape."""
    if len(buf) < 4:
        raise IdxTruncatedError("file shorter than the magic number", len(buf), path)
    (magic,) = struct.unpack(">I", buf[:4])
    if magic != expected_magic:
        raise IdxMagicError(f"magic 0x{magic:08x}, expected 0x{expected_magic:08x}", 0, path)
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(buf) < header:
        raise IdxTruncatedError(f"header needs {header} bytes, file has {len(buf)}", len(buf), path)
    dims = struct.unpack(f">{ndim}I", buf[4:header])
    need = int(np.prod(dims))
    if len(buf) - header < need:
        raise IdxTruncatedError(f"payload needs {need} bytes, found {len(buf) - header}", len(buf), path)
    return np.frombuffer(buf, dtype=np.uint8, count=need, offset=header).reshape(dims)


def write_idx(path, array):
    """Write a uint8 array as IDX (``ndim`` 1 for labels, 3 for images)."""
    a = np.ascontiguousarray(array, dtype=np.uint8)
    magic = 0x00000800 | a.ndim
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wb") as fh:
        fh.write(struct.pack(f">I{a.ndim}I", magic, *a.shape))
        fh.write(a.tobytes())


def load_idx(images_path, labels_path, name=""):
    imgs = parse_idx(_read_bytes(images_path), IMAGE_MAGIC, str(images_path))
    labs = parse_idx(_read_bytes(labels_path), LABEL_MAGIC, str(labels_path))
    if imgs.shape[0] != labs.shape[0]:
        # the item count lives right after the magic number in both files
        raise IdxCountMismatchError(f"{imgs.shape[0]} images but {labs.shape[0]} labels", 4, str(labels_path))
    X = imgs.reshape(imgs.shape[0], -1).astype(np.float64) / 255.0
    y = labs.astype(np.int64)
    n_classes = max(int(y.max()) + 1, 10) if len(y) else 10
    return Dataset(X, y, n_classes, name or os.path.basename(str(images_path)))


def _find(data_dir, stem):
    for cand in (stem, stem + ".gz", stem.replace("-idx", ".idx"), stem.replace("-idx", ".idx") + ".gz"):
        p = os.path.join(data_dir, cand)
        if os.path.exists(p):
            return p
    raise DataError(f"{stem} not found in {data_dir}; run `chaosnet fetch-data` or set {DATA_ENV}")


def load_mnist(split="train", data_dir=None):
    data_dir = data_dir or default_data_dir()
    if split not in ("train", "test"):
        raise ValueError("split must be 'train' or 'test'")
    return load_idx(_find(data_dir, MNIST_FILES[f"{split}_images"]),
                    _find(data_dir, MNIST_FILES[f"{split}_labels"]), name=f"mnist-{split}")


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def fetch_mnist(data_dir=None, mirrors=None, checksums=None, timeout=60, log=print):
    """Download the four IDX files (gzip on the mirror) and verify their SHA-256.

    Mirrors are tried in order for each file; ``file://`` URLs work for
    offline copies. Files already present with the right checksum are kept.
    """
    data_dir = data_dir or default_data_dir()
    mirrors = list(mirrors or MNIST_MIRRORS)
    checksums = checksums or MNIST_SHA256
    os.makedirs(data_dir, exist_ok=True)
    for key, stem in MNIST_FILES.items():
        target = os.path.join(data_dir, stem)
        try:
            existing = _find(data_dir, stem)
        except DataError:
            existing = None
        if existing and not existing.endswith(".gz") and _sha256(existing) == checksums[key]:
            log(f"{stem}: present")
            continue
        errors = []
        for base in mirrors:
            url = base.rstrip("/") + "/" + stem + ".gz"
            tmp = target + ".part"
            try:
                with urllib.request.urlopen(url, timeout=timeout) as resp, open(tmp + ".gz", "wb") as out:
                    shutil.copyfileobj(resp, out)
                with gzip.open(tmp + ".gz", "rb") as src, open(tmp, "wb") as out:
                    shutil.copyfileobj(src, out)
            except OSError as err:
                errors.append(f"{url}: {err}")
                continue
            finally:
                if os.path.exists(tmp + ".gz"):
                    os.remove(tmp + ".gz")
            digest = _sha256(tmp)
            if digest != checksums[key]:
                os.remove(tmp)
                errors.append(f"{url}: checksum {digest} does not match")
                continue
            os.replace(tmp, target)
            log(f"{stem}: fetched from {base}")
            break
        else:
            raise DataError(f"could not fetch {stem}: " + "; ".join(errors))
    return data_dir


# ---- synthetic 2-D problems -------------------------------------------------

SYNTH_KINDS = ("clusters", "rings", "moons")


def _clusters(gen, n, n_classes, sigma, radius):
    ang = 2 * np.pi * np.arange(n_classes) / n_classes + np.pi / 4
    centers = radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    y = np.arange(n) % n_classes
    return centers[y] + sigma * gen.standard_normal((n, 2)), y


def _rings(gen, n, n_classes, sigma, radius):
    y = np.arange(n) % n_classes
    r = radius * (y + 1) / n_classes + sigma * gen.standard_normal(n)
    t = gen.uniform(0, 2 * np.pi, n)
    return np.stack([r * np.cos(t), r * np.sin(t)], axis=1), y


def _moons(gen, n, n_classes, sigma, radius):
    y = np.arange(n) % 2
    t = gen.uniform(0, np.pi, n)
    upper = np.stack([np.cos(t), np.sin(t)], axis=1)
    lower = np.stack([1 - np.cos(t), 0.5 - np.sin(t)], axis=1)
    X = np.where(y[:, None] == 0, upper, lower) - np.array([0.5, 0.25])
    return radius * X + sigma * gen.standard_normal((n, 2)), y


def grid_points(n, lo, hi):
    """``ceil(sqrt(n))^2`` evenly spaced points over ``[lo, hi]^2`` in row-major order, first ``n`` kept."""
    side = math.ceil(math.sqrt(n))
    ax = np.linspace(lo, hi, side)
    gx, gy = np.meshgrid(ax, ax)
    return np.stack([gx.ravel(), gy.ravel()], axis=1)[:n]


def synth_2d(kind="clusters", n_train=2000, n_test_grid=9000, seed=0, n_classes=None,
             sigma=0.3, radius=None, extent=3.0):
    """Training samples from a named 2-D generator and a uniform test grid over ``[-extent, extent]^2``.

    Cluster centres sit on a circle; with the defaults neighbouring centres
    are ``10 sigma`` apart. The grid carries no labels.
    """
    if kind not in SYNTH_KINDS:
        raise ValueError(f"unknown kind {kind!r}; choose from {SYNTH_KINDS}")
    n_classes = n_classes or {"clusters": 4, "rings": 2, "moons": 2}[kind]
    if n_train < n_classes:
        raise ValueError("need at least one sample per class")
    if radius is None:
        radius = {"clusters": 10 * sigma / math.sqrt(2), "rings": 2.5, "moons": 2.0}[kind]
    gen = RngStream(seed, 5).generator()
    X, y = {"clusters": _clusters, "rings": _rings, "moons": _moons}[kind](gen, n_train, n_classes, sigma, radius)
    train = Dataset(X, y.astype(np.int64), n_classes, f"{kind}-train")
    return train, grid_points(n_test_grid, -extent, extent)


# ---- noise -----------------------------------------------------------------

NOISE_KINDS = ("observational", "dynamical")


@dataclass(frozen=True)
class NoiseSpec:
    """Additive Gaussian noise at signal-to-noise variance ratio ``sn_ratio``."""

    kind: str
    sn_ratio: float
    seed: int = 0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"noise kind must be one of {NOISE_KINDS}")
        if not self.sn_ratio > 0:
            raise ValueError("sn_ratio must be positive")


def state_variance(states):
    """Variance of all entries of a batch of clean states, the ``A_s`` of the SN ratio."""
    return float(np.var(np.asarray(states, dtype=np.float64)))


def inject_noise(x, spec: NoiseSpec, variance, trial=0):
    """``x + N(0, variance / sn_ratio)``; a fresh array, ``x`` is untouched."""
    if not variance > 0:
        raise ValueError("state variance must be positive")
    x = np.asarray(x, dtype=np.float64)
    gen = RngStream(spec.seed, 1000 + trial).generator()
    return x + math.sqrt(variance / spec.sn_ratio) * gen.standard_normal(x.shape)
