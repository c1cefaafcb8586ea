"""Two-dimensional SNE / t-SNE over a precomputed mixed distance.

The distance combines Euclidean distance on the standardized continuous
block with a mismatch fraction on the discrete block, the latter rescaled
by ``tau`` so both parts have comparable range.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .affinity import squared_distances, standardize
from .dataset import Dataset
from .errors import ConfigError, NumericError

log = logging.getLogger(__name__)

JOINT_FLOOR = 1e-12
EXAGGERATION = 12.0
EXAGGERATION_ITERS = 250
MOMENTUM_EARLY, MOMENTUM_LATE = 0.5, 0.8
MIN_GAIN = 0.01
PALETTE = ("#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


@dataclass(frozen=True)
class EmbedParams:
    perplexity: float = 90.0
    learning_rate: float = 7.0
    iterations: int = 1000
    q_kind: str = "student_t"
    seed: int = 0

    def __post_init__(self):
        if not self.perplexity > 1:
            raise ConfigError("perplexity must exceed 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.q_kind not in ("student_t", "gaussian"):
            raise ConfigError(f"unknown q_kind {self.q_kind!r}")


@dataclass(frozen=True, eq=False)
class DistanceMatrix:
    values: np.ndarray
    tau: float
    continuous: np.ndarray
    discrete: np.ndarray

    @property
    def m(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class Embedding:
    coords: np.ndarray
    final_kl: float
    initial_kl: float
    kl_trace: list[tuple[int, float]] = field(default_factory=list)


def mismatch_fraction(discrete: np.ndarray) -> np.ndarray:
    """``(N - N_matching) / N`` over the discrete columns."""
    D = np.asarray(discrete)
    m, N = D.shape
    matches = np.zeros((m, m))
    for p in range(N):
        matches += D[:, p, None] == D[None, :, p]
    return (N - matches) / N


def mixed_distance(data: Dataset) -> DistanceMatrix:
    n_c, n_d = data.continuous.shape[1], data.discrete.shape[1]
    m = data.m
    Dc = np.sqrt(squared_distances(standardize(data.continuous))) if n_c else np.zeros((m, m))
    Dd = mismatch_fraction(data.discrete) if n_d else np.zeros((m, m))
    if n_d == 0:
        tau = 0.0
    elif n_c == 0:
        tau = 1.0
    elif Dd.max() == 0:
        tau = 0.0
    else:
        tau = (n_d / n_c) * (Dc.max() / Dd.max())
    return DistanceMatrix(Dc + tau * Dd, float(tau), Dc, Dd)


# --------------------------------------------------------------------------
# input-space affinities


def _row_probs(sq: np.ndarray, beta: np.ndarray):
    """Conditional rows and their entropies (bits) for precisions ``beta``."""
    logits = -sq * beta[:, None]
    np.fill_diagonal(logits, -np.inf)
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    P = e / e.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        H = -np.sum(np.where(P > 0, P * np.log2(P), 0.0), axis=1)
    return P, H


def row_perplexity(P: np.ndarray) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        H = -np.sum(np.where(P > 0, P * np.log2(P), 0.0), axis=1)
    return 2.0 ** H


def conditional_p(D: DistanceMatrix | np.ndarray, perplexity: float, tol: float = 1e-5, max_iter: int = 50) -> np.ndarray:
    """Per-row Gaussian conditionals over squared distances, bandwidths chosen
    by bisection on log-precision so that ``2**H`` hits ``perplexity``.

    Rows that do not reach ``tol`` are reported through a warning.
    """
    values = D.values if isinstance(D, DistanceMatrix) else np.asarray(D, dtype=float)
    m = values.shape[0]
    if not perplexity < m:
        raise ConfigError(f"perplexity {perplexity} must be smaller than m={m}")
    sq = values ** 2
    target = math.log2(perplexity)
    off = sq[~np.eye(m, dtype=bool)]
    scale = float(np.mean(off[off > 0])) if np.any(off > 0) else 1.0

    # bracket log(beta): entropy decreases as beta grows
    lo = np.full(m, math.log(1.0 / scale))
    hi = lo.copy()
    for _ in range(200):
        _, H = _row_probs(sq, np.exp(lo))
        need = H < target
        if not need.any():
            break
        lo[need] -= 2.0
    for _ in range(200):
        _, H = _row_probs(sq, np.exp(hi))
        need = H > target
        if not need.any():
            break
        hi[need] += 2.0

    for _ in range(max_iter):
        mid = (lo + hi) / 2
        P, H = _row_probs(sq, np.exp(mid))
        if np.all(np.abs(2.0 ** H - perplexity) < tol):
            break
        above = H > target
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
    P, H = _row_probs(sq, np.exp((lo + hi) / 2))
    achieved = 2.0 ** H
    bad = np.flatnonzero(np.abs(achieved - perplexity) >= tol)
    if bad.size:
        warnings.warn(
            f"{bad.size} rows did not reach perplexity {perplexity}: "
            + ", ".join(f"row {i}: {achieved[i]:.6g}" for i in bad[:10]),
            RuntimeWarning, stacklevel=2,
        )
    return P


def symmetrize(cond: np.ndarray) -> np.ndarray:
    C = np.asarray(cond, dtype=float)
    m = C.shape[0]
    P = (C + C.T) / (2.0 * m)
    P = np.maximum(P, JOINT_FLOOR)
    np.fill_diagonal(P, 0.0)
    return P / P.sum()


# --------------------------------------------------------------------------
# objective


def _low_dim(Y: np.ndarray, q_kind: str):
    sq = squared_distances(Y)
    if q_kind == "student_t":
        num = 1.0 / (1.0 + sq)
    else:
        # Q is shift-invariant in the exponent; shifting avoids underflow
        off = sq[~np.eye(len(sq), dtype=bool)]
        num = np.exp(-(sq - (off.min() if off.size else 0.0)))
    np.fill_diagonal(num, 0.0)
    return num, num / num.sum()


def kl_divergence(P: np.ndarray, Y: np.ndarray, q_kind: str = "student_t") -> float:
    _, Q = _low_dim(Y, q_kind)
    mask = P > 0
    return float(np.sum(P[mask] * np.log(P[mask] / np.maximum(Q[mask], 1e-300))))


def kl_gradient(P: np.ndarray, Y: np.ndarray, q_kind: str = "student_t") -> np.ndarray:
    num, Q = _low_dim(Y, q_kind)
    M = (P - Q) * num if q_kind == "student_t" else (P - Q)
    return 4.0 * (M.sum(axis=1)[:, None] * Y - M @ Y)


def run_embedding(D: DistanceMatrix | np.ndarray, params: EmbedParams = EmbedParams()) -> Embedding:
    values = D.values if isinstance(D, DistanceMatrix) else np.asarray(D, dtype=float)
    m = values.shape[0]
    if params.perplexity > m / 3:
        log.warning("perplexity %.4g exceeds m/3 for m=%d", params.perplexity, m)
    P = symmetrize(conditional_p(values, params.perplexity))
    rng = np.random.default_rng(params.seed)
    Y = rng.normal(0.0, 1e-4, size=(m, 2))
    update = np.zeros_like(Y)
    gains = np.ones_like(Y)
    initial = kl_divergence(P, Y, params.q_kind)
    trace = [(0, initial)]
    for it in range(params.iterations):
        early = it < EXAGGERATION_ITERS
        grad = kl_gradient(P * EXAGGERATION if early else P, Y, params.q_kind)
        if not np.all(np.isfinite(grad)):
            raise NumericError(f"non-finite gradient at iteration {it}")
        momentum = MOMENTUM_EARLY if early else MOMENTUM_LATE
        same = (grad > 0) == (update > 0)
        gains = np.maximum(np.where(same, gains * 0.8, gains + 0.2), MIN_GAIN)
        update = momentum * update - params.learning_rate * gains * grad
        Y = Y + update
        Y = Y - Y.mean(axis=0)
        if (it + 1) % 50 == 0:
            trace.append((it + 1, kl_divergence(P, Y, params.q_kind)))
    final = kl_divergence(P, Y, params.q_kind)
    return Embedding(Y, final, initial, trace)


# --------------------------------------------------------------------------
# plotting support


def sample_per_group(groups, per_group: int, seed: int = 0) -> np.ndarray:
    """Up to ``per_group`` indices from every group, sorted."""
    groups = np.asarray(groups)
    rng = np.random.default_rng(seed)
    out = []
    for g in np.unique(groups):
        idx = np.flatnonzero(groups == g)
        out.append(rng.choice(idx, size=min(per_group, idx.size), replace=False))
    return np.sort(np.concatenate(out))


def write_coords(path: str | Path, index, coords, groups) -> None:
    with open(path, "w") as fh:
        fh.write("row,x,y,group\n")
        for i, (x, y), g in zip(index, coords, groups):
            fh.write(f"{int(i)},{float(x)!r},{float(y)!r},{g}\n")


def svg_scatter(coords, groups, labels=None, title: str = "") -> str:
    """Standalone 800x800 SVG scatter with one colour per group and a legend."""
    coords = np.asarray(coords, dtype=float)
    groups = np.asarray(groups)
    uniq = list(dict.fromkeys(groups.tolist()))
    labels = labels or {g: str(g) for g in uniq}
    size, pad = 800, 60
    lo, hi = coords.min(axis=0), coords.max(axis=0)
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    xy = pad + (coords - lo) / span * (size - 2 * pad)
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{size // 2}" y="30" text-anchor="middle" font-family="sans-serif" font-size="18">{title}</text>')
    for (x, y), g in zip(xy, groups.tolist()):
        colour = PALETTE[uniq.index(g) % len(PALETTE)]
        out.append(f'<circle cx="{x:.2f}" cy="{size - y:.2f}" r="4" fill="{colour}" fill-opacity="0.75"/>')
    for k, g in enumerate(uniq):
        y = 50 + 22 * k
        out.append(f'<rect x="{size - 170}" y="{y}" width="14" height="14" fill="{PALETTE[k % len(PALETTE)]}"/>')
        out.append(f'<text x="{size - 150}" y="{y + 12}" font-family="sans-serif" font-size="14">{labels[g]}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
