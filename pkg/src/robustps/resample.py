"""Cluster-proportion resampling: W -> w* -> w_hat -> p* -> subset."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Dataset, hamilton
from .errors import ConfigError, DataError
from .spectral import ClusterAssignment

GAMMA_DEFAULT = 0.7
GAMMA_UNSMOOTHED = 0.0


@dataclass(frozen=True)
class ResampleParams:
    gamma: float = GAMMA_DEFAULT
    eta: float = 2.0
    epsilon: float = 0.0

    def __post_init__(self):
        if self.gamma < 0:
            raise ConfigError(f"gamma must be >= 0, got {self.gamma}")
        if not 0 <= self.eta <= 2:
            raise ConfigError(f"eta must lie in [0, 2], got {self.eta}")
        if not 0 <= self.epsilon <= 0.5:
            raise ConfigError(f"epsilon must lie in [0, 0.5], got {self.epsilon}")
        if self.eta * self.epsilon >= 1:
            raise ConfigError("eta * epsilon must be < 1")

    @property
    def coefficient(self) -> float:
        return self.gamma / (1.0 - self.eta * self.epsilon)


@dataclass(frozen=True, eq=False)
class ResamplePlan:
    W: np.ndarray
    w_star: np.ndarray
    w_hat: np.ndarray
    p_star: np.ndarray
    targets: np.ndarray
    quotas: np.ndarray

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("W", "w_star", "w_hat", "p_star", "targets", "quotas")}


def contingency(assign: ClusterAssignment, data: Dataset) -> np.ndarray:
    if assign.m != data.m:
        raise DataError(f"assignment has {assign.m} labels, dataset has {data.m} rows")
    W = np.zeros((data.d, assign.n), dtype=np.int64)
    np.add.at(W, (data.treatment, assign.labels), 1)
    return W


def normalize_columns(W) -> np.ndarray:
    W = np.asarray(W, dtype=float)
    col = W.sum(axis=0)
    if np.any(col <= 0):
        raise DataError(f"empty cluster column(s): {np.flatnonzero(col <= 0).tolist()}")
    return W / col


def interpolate(w_star, params: ResampleParams = ResampleParams()) -> np.ndarray:
    w = np.asarray(w_star, dtype=float)
    return w + params.coefficient * w * w


def row_distribution(w_hat) -> np.ndarray:
    w = np.asarray(w_hat, dtype=float)
    row = w.sum(axis=1)
    if np.any(row <= 0):
        raise DataError(f"all-zero row(s) in w_hat: {np.flatnonzero(row <= 0).tolist()}")
    return w / row[:, None]


def sampling_distribution(W, params: ResampleParams = ResampleParams()) -> np.ndarray:
    return row_distribution(interpolate(normalize_columns(W), params))


def apportion(target: int, p, capacity=None) -> np.ndarray:
    """Hamilton quotas of ``target`` over ``p``, capped at ``capacity``.

    Overflow from capped cells is re-apportioned over the uncapped cells in
    proportion to their share of ``p``, repeating until no cell overflows.
    """
    p = np.asarray(p, dtype=float)
    q = hamilton(target, p)
    if capacity is None:
        return q
    cap = np.asarray(capacity, dtype=np.int64)
    if target > cap.sum():
        raise DataError(f"target {target} exceeds the {int(cap.sum())} available samples")
    fixed = np.zeros(len(p), bool)
    while np.any(q > cap):
        over = q > cap
        fixed |= over
        q = np.where(fixed, cap, q)
        free = ~fixed
        remaining = target - int(q[fixed].sum())
        weights = np.where(free, p, 0.0)
        if weights.sum() <= 0:
            weights = np.where(free, cap, 0).astype(float)
        q[free] = hamilton(remaining, weights)[free]
    return q


def plan(
    data: Dataset,
    assign: ClusterAssignment,
    params: ResampleParams = ResampleParams(),
    targets=None,
    replace: bool = False,
) -> ResamplePlan:
    W = contingency(assign, data)
    w_star = normalize_columns(W)
    w_hat = interpolate(w_star, params)
    p_star = row_distribution(w_hat)
    targets = data.class_counts() if targets is None else np.asarray(targets, dtype=np.int64)
    if np.any(targets < 1):
        raise ConfigError("every class needs a subset target >= 1")
    if not replace:
        too_big = np.flatnonzero(targets > W.sum(axis=1))
        if too_big.size:
            raise DataError(
                f"targets for classes {too_big.tolist()} exceed class sizes; "
                "enable sampling with replacement"
            )
    quotas = np.stack([
        apportion(int(targets[i]), p_star[i], None if replace else W[i]) for i in range(data.d)
    ])
    return ResamplePlan(W, w_star, w_hat, p_star, targets, quotas)


def draw_subset(
    data: Dataset,
    assign: ClusterAssignment,
    rplan: ResamplePlan,
    seed: int = 0,
    replace: bool = False,
) -> Dataset:
    """Uniform draws inside each (treatment, cluster) cell according to ``rplan.quotas``."""
    rng = np.random.default_rng(seed)
    picked = []
    for i in range(data.d):
        for j in range(assign.n):
            q = int(rplan.quotas[i, j])
            if q == 0:
                continue
            cell = np.flatnonzero((data.treatment == i) & (assign.labels == j))
            if cell.size == 0:
                raise DataError(f"quota {q} for empty cell (treatment {i}, cluster {j})")
            picked.append(rng.choice(cell, size=q, replace=replace))
    idx = np.sort(np.concatenate(picked))
    return data.subset(idx)


def random_subset(data: Dataset, size: int, seed: int = 0) -> Dataset:
    """Uniform subset without replacement, used as the unprocessed baseline."""
    if size > data.m:
        raise DataError(f"subset size {size} exceeds m={data.m}")
    rng = np.random.default_rng(seed)
    return data.subset(np.sort(rng.choice(data.m, size=size, replace=False)))


def class_targets(data: Dataset, total: int) -> np.ndarray:
    """Split ``total`` over classes in proportion to class counts."""
    return hamilton(min(total, data.m), data.class_counts())
