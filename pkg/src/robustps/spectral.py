"""Spectral clustering over a precomputed affinity.

Top eigenvectors of ``D^-1/2 A D^-1/2`` (Ng-Jordan-Weiss), row-normalized,
then k-means++ / Lloyd with restarts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .affinity import AffinityMatrix, KernelParams, affinity_block, build_affinity
from .dataset import Dataset
from .errors import DataError, NumericError

DEFAULT_CAP = 12_000


@dataclass(frozen=True, eq=False)
class ClusterAssignment:
    labels: np.ndarray
    n: int
    embedded: np.ndarray | None = None
    inertia: float = 0.0
    eigenvalues: np.ndarray | None = None
    history: list[float] = field(default_factory=list)

    @property
    def m(self) -> int:
        return len(self.labels)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n)


def normalized_affinity(A: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    deg = A.sum(axis=1)
    isolated = np.flatnonzero(deg <= 0)
    if isolated.size:
        raise DataError(f"sample {int(isolated[0])} has zero degree in the affinity graph")
    dinv = 1.0 / np.sqrt(deg)
    return A * (dinv[:, None] * dinv[None, :])


def top_eigenpairs(S: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """``n`` largest eigenpairs, descending, each vector's largest-|entry| made positive."""
    m = S.shape[0]
    try:
        vals, vecs = scipy.linalg.eigh(S, subset_by_index=[m - n, m - 1], driver="evr")
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericError(f"eigensolver failed: {exc}") from exc
    vals, vecs = vals[::-1], vecs[:, ::-1]
    pivot = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[pivot, np.arange(n)])
    signs[signs == 0] = 1.0
    return vals.copy(), vecs * signs


def spectral_embed(A: AffinityMatrix | np.ndarray, n: int, return_eigenvalues: bool = False):
    values = A.values if isinstance(A, AffinityMatrix) else np.asarray(A, dtype=float)
    m = values.shape[0]
    if not 2 <= n <= m:
        raise ValueError(f"need 2 <= n <= m, got n={n}, m={m}")
    vals, vecs = top_eigenpairs(normalized_affinity(values), n)
    norms = np.linalg.norm(vecs, axis=1)
    out = np.zeros_like(vecs)
    nz = norms > 0
    out[nz] = vecs[nz] / norms[nz, None]
    return (out, vals) if return_eigenvalues else out


# --------------------------------------------------------------------------
# k-means


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    out = np.zeros((X.shape[0], C.shape[0]))
    for c in range(X.shape[1]):
        diff = X[:, c, None] - C[None, :, c]
        out += diff * diff
    return out


def kmeans_plusplus(X: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    m = X.shape[0]
    centres = [X[rng.integers(m)]]
    closest = _sq_dists(X, centres[0][None])[:, 0]
    for _ in range(1, n):
        total = closest.sum()
        if total <= 0:
            idx = int(rng.integers(m))
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, m - 1)
        centres.append(X[idx])
        closest = np.minimum(closest, _sq_dists(X, X[idx][None])[:, 0])
    return np.array(centres)


def lloyd(X: np.ndarray, centres: np.ndarray, max_iter: int = 300, tol: float = 1e-10):
    """Returns ``(labels, centres, inertia, history)``; history holds per-iteration inertia."""
    n = centres.shape[0]
    centres = centres.copy()
    history = []
    for _ in range(max_iter):
        dist = _sq_dists(X, centres)
        labels = np.argmin(dist, axis=1)
        history.append(float(dist[np.arange(len(X)), labels].sum()))
        new = centres.copy()
        counts = np.bincount(labels, minlength=n)
        for k in range(n):
            if counts[k]:
                new[k] = X[labels == k].mean(axis=0)
        for k in np.flatnonzero(counts == 0):
            # re-seed at the point worst served by its current centroid
            own = ((X - new[labels]) ** 2).sum(axis=1)
            far = int(np.argmax(own))
            new[k] = X[far]
            labels[far] = k
        shift = float(np.abs(new - centres).max())
        centres = new
        if shift < tol:
            break
    dist = _sq_dists(X, centres)
    labels = np.argmin(dist, axis=1)
    inertia = float(dist[np.arange(len(X)), labels].sum())
    history.append(inertia)
    return labels, centres, inertia, history


def kmeans(points: np.ndarray, n: int, restarts: int = 10, seed: int = 0) -> ClusterAssignment:
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    if len(np.unique(X, axis=0)) < n:
        raise DataError(f"fewer than {n} distinct points")
    best = None
    for r in range(restarts):
        rng = np.random.default_rng(seed + r)
        labels, _, inertia, hist = lloyd(X, kmeans_plusplus(X, n, rng))
        if best is None or inertia < best[1]:
            best = (labels, inertia, hist)
    labels, inertia, hist = best
    return ClusterAssignment(labels=labels, n=n, embedded=X, inertia=inertia, history=hist)


def _canonical(labels: np.ndarray, n: int) -> np.ndarray:
    """Relabel clusters in order of first appearance."""
    _, first = np.unique(labels, return_index=True)
    order = labels[np.sort(first)]
    remap = np.empty(n, dtype=np.int64)
    remap[order] = np.arange(len(order))
    return remap[labels]


def cluster_affinity(A: AffinityMatrix | np.ndarray, n: int, restarts: int = 10, seed: int = 0) -> ClusterAssignment:
    emb, vals = spectral_embed(A, n, return_eigenvalues=True)
    km = kmeans(emb, n, restarts=restarts, seed=seed)
    return ClusterAssignment(
        labels=_canonical(km.labels, n), n=n, embedded=emb, inertia=km.inertia,
        eigenvalues=vals, history=km.history,
    )


def cluster(
    data: Dataset,
    n: int | None = None,
    params: KernelParams = KernelParams(),
    seed: int = 0,
    restarts: int = 10,
    cap: int = DEFAULT_CAP,
    affinity: AffinityMatrix | None = None,
) -> ClusterAssignment:
    """build_affinity -> spectral_embed -> kmeans; ``n`` defaults to ``d``.

    Above ``cap`` samples a uniform subsample is clustered and every other
    sample joins the cluster with the highest mean affinity to it.
    """
    n = data.d if n is None else n
    if data.m <= cap:
        A = affinity if affinity is not None else build_affinity(data, params)
        return cluster_affinity(A, n, restarts=restarts, seed=seed)

    rng = np.random.default_rng(seed)
    core = np.sort(rng.choice(data.m, size=cap, replace=False))
    A = build_affinity(data.subset(core), params)
    sub = cluster_affinity(A, n, restarts=restarts, seed=seed)
    labels = np.empty(data.m, dtype=np.int64)
    labels[core] = sub.labels
    rest = np.setdiff1d(np.arange(data.m), core)
    core_data = data.subset(core)
    for lo in range(0, len(rest), cap):
        chunk = rest[lo:lo + cap]
        block = affinity_block(core_data, data.continuous[chunk], data.discrete[chunk], A.sigma)
        scores = np.stack([block[:, sub.labels == k].mean(axis=1) for k in range(n)], axis=1)
        labels[chunk] = np.argmax(scores, axis=1)
    return ClusterAssignment(labels=labels, n=n, embedded=None, inertia=sub.inertia,
                             eigenvalues=sub.eigenvalues, history=sub.history)
