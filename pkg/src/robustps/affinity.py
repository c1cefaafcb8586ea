"""Feature-wise mixed-kernel similarity: Gaussian over the continuous block
plus one delta kernel per discrete column."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import Dataset
from .errors import ConfigError, DataError, NumericError

DUMP_MAGIC = b"AFFM"


@dataclass(frozen=True)
class KernelParams:
    sigma: float | str = "auto"

    def __post_init__(self):
        if self.sigma != "auto":
            if isinstance(self.sigma, str) or not float(self.sigma) > 0:
                raise ConfigError(f"sigma must be positive or 'auto', got {self.sigma!r}")


@dataclass(frozen=True, eq=False)
class AffinityMatrix:
    values: np.ndarray
    sigma: float | None = None

    @property
    def m(self) -> int:
        return self.values.shape[0]


def gaussian_kernel(xi, xj, sigma: float) -> float:
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    xj = np.atleast_1d(np.asarray(xj, dtype=float))
    if xi.shape != xj.shape:
        raise ValueError(f"length mismatch: {xi.shape} vs {xj.shape}")
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    return float(np.exp(-np.sum((xi - xj) ** 2) / (2.0 * sigma * sigma)))


def standardize(X: np.ndarray) -> np.ndarray:
    """Zero mean, unit variance per column; constant columns become all zeros."""
    X = np.asarray(X, dtype=float)
    if X.shape[1] == 0:
        return X.copy()
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    out = np.zeros_like(X)
    ok = sd > 0
    out[:, ok] = (X[:, ok] - mu[ok]) / sd[ok]
    return out


def squared_distances(X: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances, accumulated column by column.

    Each entry is a pure function of its pair, so the matrix is exactly
    symmetric with an exactly zero diagonal.
    """
    X = np.asarray(X, dtype=float)
    m = X.shape[0]
    out = np.zeros((m, m))
    for c in range(X.shape[1]):
        diff = X[:, c, None] - X[None, :, c]
        out += diff * diff
    return out


def median_sigma(X: np.ndarray) -> float:
    """Median heuristic: sqrt of the median off-diagonal squared distance."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] < 2:
        raise ValueError("median_sigma needs at least two points")
    sq = squared_distances(X)
    iu = np.triu_indices(X.shape[0], k=1)
    med = float(np.median(sq[iu]))
    if med <= 0:
        raise NumericError(
            "median pairwise distance is zero (too many identical points); set sigma explicitly"
        )
    return float(np.sqrt(med))


def gaussian_kernel_matrix(X: np.ndarray, sigma: float) -> np.ndarray:
    return np.exp(-squared_distances(X) / (2.0 * sigma * sigma))


def delta_kernel_matrix(column) -> np.ndarray:
    """Entry ``(i, j)`` is ``1 / N(v)`` when both samples take value ``v``, else 0."""
    col = np.asarray(column)
    _, inverse, counts = np.unique(col, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    same = inverse[:, None] == inverse[None, :]
    return np.where(same, 1.0 / counts[inverse][:, None], 0.0)


def resolve_sigma(Xc: np.ndarray, params: KernelParams) -> float:
    if params.sigma == "auto":
        return median_sigma(Xc)
    return float(params.sigma)


def build_affinity(data: Dataset, params: KernelParams = KernelParams()) -> AffinityMatrix:
    """Sum of the per-column delta kernels plus the Gaussian kernel on the
    standardized continuous block."""
    n_c, n_d = data.continuous.shape[1], data.discrete.shape[1]
    if n_c == 0 and n_d == 0:
        raise DataError("dataset has no covariates")
    out = np.zeros((data.m, data.m))
    for p in range(n_d):
        out += delta_kernel_matrix(data.discrete[:, p])
    sigma = None
    if n_c:
        Xc = standardize(data.continuous)
        sigma = resolve_sigma(Xc, params)
        out += gaussian_kernel_matrix(Xc, sigma)
    return AffinityMatrix(out, sigma)


def affinity_block(ref: Dataset, continuous, discrete, sigma: float | None) -> np.ndarray:
    """Affinity of each given row to each ``ref`` row, using ``ref``'s
    standardization and category counts."""
    continuous = np.asarray(continuous, dtype=float).reshape(-1, ref.continuous.shape[1])
    discrete = np.asarray(discrete, dtype=np.int64).reshape(len(continuous), ref.discrete.shape[1])
    out = np.zeros((len(continuous), ref.m))
    for p in range(ref.discrete.shape[1]):
        ref_col, col = ref.discrete[:, p], discrete[:, p]
        counts = np.bincount(ref_col, minlength=max(ref_col.max(), col.max()) + 1)
        same = col[:, None] == ref_col[None, :]
        out += np.where(same, 1.0 / np.maximum(counts[ref_col], 1)[None, :], 0.0)
    if ref.continuous.shape[1]:
        mu, sd = ref.continuous.mean(axis=0), ref.continuous.std(axis=0)
        safe = np.where(sd > 0, sd, 1.0)
        scale = lambda X: np.where(sd > 0, (X - mu) / safe, 0.0)
        a, b = scale(continuous), scale(ref.continuous)
        sq = np.zeros_like(out)
        for c in range(a.shape[1]):
            diff = a[:, c, None] - b[None, :, c]
            sq += diff * diff
        out += np.exp(-sq / (2.0 * sigma * sigma))
    return out


def dump_affinity(A: AffinityMatrix, path: str | Path) -> None:
    """Row-major float64 with an 8-byte header: 4-byte magic + uint32 m."""
    with open(path, "wb") as fh:
        fh.write(DUMP_MAGIC + struct.pack("<I", A.m))
        fh.write(np.ascontiguousarray(A.values, dtype="<f8").tobytes())


def load_affinity(path: str | Path) -> AffinityMatrix:
    raw = Path(path).read_bytes()
    if raw[:4] != DUMP_MAGIC or len(raw) < 8:
        raise DataError(f"{path}: not an affinity dump")
    (m,) = struct.unpack("<I", raw[4:8])
    if len(raw) != 8 + 8 * m * m:
        raise DataError(f"{path}: truncated affinity dump")
    values = np.frombuffer(raw, dtype="<f8", offset=8).reshape(m, m).astype(np.float64)
    return AffinityMatrix(values)
