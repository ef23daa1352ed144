"""Random-vector and MNIST 0/1 datasets; IDX reader/writer; PCA via Jacobi."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .linalg import jacobi_eigh

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
IMAGE_SIDE = 28
N_PIXELS = IMAGE_SIDE * IMAGE_SIDE
PIXEL_MAX = 255.0
PCA_TOL = 1e-10
DATA_DIR_ENV = "QMLPLATEAU_MNIST_DIR"
# digit -> class label
LABEL_OF_DIGIT = {0: 1, 1: -1}
IDX_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "t10k": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


class FormatError(ValueError):
    """Malformed IDX content; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class IngestionError(OSError):
    pass


@dataclass(frozen=True)
class DataPoint:
    features: np.ndarray
    label: int


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.features.ndim != 2 or self.features.shape[0] == 0:
            raise ValueError("a dataset needs a nonempty (N, n) feature array")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("one label per feature row is required")
        if not np.all(np.isin(self.labels, (-1, 1))):
            raise ValueError("labels must be -1 or +1")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features must be finite")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def points(self) -> list[DataPoint]:
        return [DataPoint(x, int(y)) for x, y in zip(self.features, self.labels)]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx], dict(self.provenance))


def random_dataset(n: int, count: int, seed=None) -> Dataset:
    """``count`` vectors uniform on [-pi, pi]^n with fair random +-1 labels."""
    if n < 1 or count < 1:
        raise ValueError("n and count must be positive")
    rng = np.random.default_rng(seed)
    x = rng.uniform(-np.pi, np.pi, size=(count, n))
    y = rng.choice(np.array([-1, 1]), size=count)
    return Dataset(x, y, {"source": "random", "seed": seed})


# --- IDX -------------------------------------------------------------------


def read_idx(path) -> np.ndarray:
    """Parse an IDX image (count, 28, 28) or label (count,) file of unsigned bytes."""
    data = Path(path).read_bytes()
    if len(data) < 4:
        raise FormatError("file shorter than the magic number", len(data))
    (magic,) = struct.unpack(">I", data[:4])
    if magic == IMAGE_MAGIC:
        header = 16
    elif magic == LABEL_MAGIC:
        header = 8
    else:
        raise FormatError(f"bad magic number 0x{magic:08x}", 0)
    if len(data) < header:
        raise FormatError("truncated header", len(data))
    dims = struct.unpack(f">{(header - 4) // 4}I", data[4:header])
    if magic == IMAGE_MAGIC and dims[1:] != (IMAGE_SIDE, IMAGE_SIDE):
        raise FormatError(f"expected {IMAGE_SIDE}x{IMAGE_SIDE} images, header says {dims[1:]}", 8)
    expected = header + int(np.prod(dims))
    if len(data) < expected:
        raise FormatError(f"truncated body: need {expected} bytes, found {len(data)}", len(data))
    return np.frombuffer(data, dtype=np.uint8, count=expected - header, offset=header).reshape(dims)


def write_idx(path, array) -> None:
    """Write uint8 images ``(count, 28, 28)`` or labels ``(count,)`` in IDX layout."""
    a = np.asarray(array)
    if a.ndim == 3:
        magic = IMAGE_MAGIC
    elif a.ndim == 1:
        magic = LABEL_MAGIC
    else:
        raise ValueError("expected (count, 28, 28) images or (count,) labels")
    if a.size and (a.min() < 0 or a.max() > 255):
        raise ValueError("IDX payload must fit in unsigned bytes")
    with open(path, "wb") as fh:
        fh.write(struct.pack(f">I{a.ndim}I", magic, *a.shape))
        fh.write(a.astype(np.uint8).tobytes())


def load_mnist_pool(data_dir=None) -> tuple[np.ndarray, np.ndarray]:
    """All digit-0/1 images as greyscale intensities in [0, 1], shape ``(M, 784)``, and their digits.

    Reads every train/t10k pair present in ``data_dir`` (default: the
    directory named by ``QMLPLATEAU_MNIST_DIR``).
    """
    data_dir = data_dir or os.environ.get(DATA_DIR_ENV)
    if not data_dir:
        raise IngestionError(f"no MNIST directory given and ${DATA_DIR_ENV} is unset")
    root = Path(data_dir)
    images, digits = [], []
    for img_name, lbl_name in IDX_FILES.values():
        if not (root / img_name).exists():
            continue
        if not (root / lbl_name).exists():
            raise IngestionError(f"{root / img_name} has no matching {lbl_name}")
        img = read_idx(root / img_name)
        lbl = read_idx(root / lbl_name)
        if img.ndim != 3 or lbl.ndim != 1 or img.shape[0] != lbl.shape[0]:
            raise IngestionError(f"image/label count mismatch in {root}")
        keep = np.isin(lbl, tuple(LABEL_OF_DIGIT))
        images.append(img[keep].reshape(-1, N_PIXELS) / PIXEL_MAX)
        digits.append(lbl[keep].astype(int))
    if not images:
        raise IngestionError(f"no IDX files found in {root}")
    return np.concatenate(images), np.concatenate(digits)


# --- PCA -------------------------------------------------------------------


@dataclass
class PcaModel:
    mean_vector: np.ndarray
    components: np.ndarray
    eigenvalues: np.ndarray

    @property
    def n_components(self) -> int:
        return self.components.shape[1]

    def truncate(self, n: int) -> "PcaModel":
        if not 1 <= n <= self.n_components:
            raise ValueError(f"cannot keep {n} of {self.n_components} components")
        return PcaModel(self.mean_vector, self.components[:, :n], self.eigenvalues[:n])


def fit_pca(images, n_components: int) -> PcaModel:
    """Top eigenvectors of X^T X for the mean-centered rows of ``images``.

    Constant pixels contribute zero rows and columns to X^T X and are left
    out of the eigenproblem.  When there are fewer samples than remaining
    pixels the equivalent N x N problem X X^T is solved and its eigenvectors
    are mapped back through X^T.
    """
    x = np.asarray(images, dtype=float)
    if x.ndim != 2:
        raise ValueError("images must be a 2-d (samples, pixels) array")
    n_samples, n_pixels = x.shape
    if not 1 <= n_components <= n_pixels:
        raise ValueError(f"n_components must lie in [1, {n_pixels}]")
    if n_samples < n_components:
        raise ValueError(f"{n_samples} samples cannot support {n_components} components")
    mean = x.mean(axis=0)
    xc = x - mean
    live = np.flatnonzero(np.any(xc != 0.0, axis=0))
    comps = np.zeros((n_pixels, n_components))
    vals = np.zeros(n_components)
    xl = xc[:, live]
    if live.size and n_samples < live.size:
        w, u = jacobi_eigh(xl @ xl.T, tol=PCA_TOL)
        w = np.maximum(w, 0.0)
        # eigenvectors of X X^T with lambda > 0 map to unit eigenvectors X^T u / sqrt(lambda)
        rank = int(np.sum(w > PCA_TOL * max(w[0], 1.0)))
        k = min(rank, n_components)
        comps[live, :k] = xl.T @ u[:, :k] / np.sqrt(w[:k])
        vals[:k] = w[:k]
        if k < n_components:
            comps[:, k:] = _complete_basis(comps[:, :k], live, n_components - k)
    elif live.size:
        w, v = jacobi_eigh(xl.T @ xl, tol=PCA_TOL)
        k = min(live.size, n_components)
        comps[live, :k] = v[:, :k]
        vals[:k] = np.maximum(w[:k], 0.0)
        if k < n_components:
            comps[:, k:] = _complete_basis(comps[:, :k], live, n_components - k)
    else:
        comps[:, :] = np.eye(n_pixels)[:, :n_components]
    return PcaModel(mean, comps, vals)


def _complete_basis(basis: np.ndarray, live, count: int) -> np.ndarray:
    """``count`` unit vectors orthogonal to ``basis`` (null-space directions, eigenvalue 0)."""
    dim = basis.shape[0]
    live_set = set(np.asarray(live).tolist())
    order = [j for j in range(dim) if j not in live_set] + sorted(live_set)
    out = []
    cur = basis
    for j in order:
        e = np.zeros(dim)
        e[j] = 1.0
        r = e - cur @ (cur.T @ e)
        r = r - cur @ (cur.T @ r)
        nrm = np.linalg.norm(r)
        if nrm > 1e-6:
            out.append(r / nrm)
            cur = np.column_stack([cur, out[-1]])
            if len(out) == count:
                break
    return np.column_stack(out)


def project(model: PcaModel, image) -> np.ndarray:
    """(image - mean) @ components for one flattened image or a batch of rows."""
    x = np.asarray(image, dtype=float)
    if x.shape[-1] != model.mean_vector.shape[0]:
        raise ValueError(f"image has {x.shape[-1]} pixels, model expects {model.mean_vector.shape[0]}")
    return (x - model.mean_vector) @ model.components


class PCA(TransformerMixin, BaseEstimator):
    """Estimator wrapper around :func:`fit_pca` / :func:`project`."""

    def __init__(self, n_components=8):
        self.n_components = n_components

    def fit(self, X, y=None):
        X = check_array(X)
        self.model_ = fit_pca(X, self.n_components)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        return project(self.model_, check_array(X))

    @property
    def components_(self):
        check_is_fitted(self, "model_")
        return self.model_.components.T

    @property
    def explained_variance_(self):
        check_is_fitted(self, "model_")
        return self.model_.eigenvalues


def split_pool(n_available: int, train_count: int, test_count: int, seed) -> tuple[np.ndarray, np.ndarray]:
    if train_count < 1 or test_count < 0:
        raise ValueError("train_count must be positive and test_count nonnegative")
    if train_count + test_count > n_available:
        raise ValueError(f"requested {train_count + test_count} images, only {n_available} available")
    order = np.random.default_rng(seed).permutation(n_available)
    return order[:train_count], order[train_count : train_count + test_count]


def mnist_dataset(n: int, train_count: int, test_count: int, seed=None, data_dir=None, pool=None):
    """PCA-reduced digit-0/1 train and test splits.

    The PCA is fitted on the training images only and then applied to both
    splits.  Digit 0 maps to label +1 and digit 1 to -1.  ``pool`` may be a
    pre-loaded ``(images, digits)`` pair to skip reading the IDX files.
    """
    images, digits = pool if pool is not None else load_mnist_pool(data_dir)
    tr, te = split_pool(images.shape[0], train_count, test_count, seed)
    model = fit_pca(images[tr], n)
    labels = np.vectorize(LABEL_OF_DIGIT.get, otypes=[int])(digits)
    meta = {"source": "mnist-pca", "n_components": n, "seed": seed, "label_of_digit": dict(LABEL_OF_DIGIT)}
    train = Dataset(project(model, images[tr]), labels[tr], {**meta, "split": "train", "index": tr})
    test_ds = None
    if test_count:
        test_ds = Dataset(project(model, images[te]), labels[te], {**meta, "split": "test", "index": te})
    return train, test_ds
