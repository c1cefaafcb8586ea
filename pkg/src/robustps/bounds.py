"""Error-rate analysis of the resampling scheme.

A ``BoundsInstance`` pairs the true treatment-by-pattern proportions ``P``
with their corrupted counterpart ``P_star`` and the pattern sizes ``c``.
For a class ``k``, ``I`` are the patterns that truly feed the class
(``P[k] > 0``) and ``J`` the ones that should not (``P[k] == 0``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ConfigError, DataError


@dataclass(frozen=True, eq=False)
class BoundsInstance:
    P: np.ndarray
    P_star: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        Ps = np.asarray(self.P_star, dtype=float)
        c = np.asarray(self.c, dtype=float)
        if P.shape != Ps.shape or P.ndim != 2 or c.shape != (P.shape[1],):
            raise ConfigError("P, P_star must be d x n and c of length n")
        for name, M in (("P", P), ("P_star", Ps)):
            if np.any(M < 0) or np.any(M > 1):
                raise ConfigError(f"{name} entries must lie in [0, 1]")
            if np.any(np.abs(M.sum(axis=0) - 1.0) > 1e-9):
                raise ConfigError(f"{name} columns must sum to 1")
        if np.any(c <= 0):
            raise ConfigError("cluster sizes must be positive")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "P_star", Ps)
        object.__setattr__(self, "c", c)

    @property
    def d(self) -> int:
        return self.P.shape[0]

    def sets(self, k: int):
        """Boolean masks ``(I, J, I1, I2)`` for class ``k``; ties fall in ``I1``."""
        I = self.P[k] > 0
        J = ~I
        I1 = I & (self.P_star[k] <= self.P[k])
        I2 = I & ~I1
        return I, J, I1, I2


def check_assumptions(inst: BoundsInstance) -> list[bool]:
    """Per class: corrupted mass on ``I`` strictly exceeds corrupted mass on ``J``."""
    out = []
    for k in range(inst.d):
        I, J, _, _ = inst.sets(k)
        pc = inst.P_star[k] * inst.c
        out.append(bool(pc[I].sum() > pc[J].sum()))
    return out


def error_size(inst: BoundsInstance, k: int) -> float:
    I, J, _, _ = inst.sets(k)
    P, Ps, c = inst.P[k], inst.P_star[k], inst.c
    return float(np.sum(np.abs(P[I] - Ps[I]) * c[I]) + np.sum(Ps[J] * c[J]))


def correct_size(inst: BoundsInstance, k: int) -> float:
    I, _, _, _ = inst.sets(k)
    return float(np.sum(np.minimum(inst.P[k, I], inst.P_star[k, I]) * inst.c[I]))


def _ratio(num: float, den: float) -> float:
    return num / den if den > 0 else math.nan


def error_rate_bound(inst: BoundsInstance, k: int, corrected: bool = False) -> tuple[float, float]:
    """``(eta_hat, bound)`` for class ``k``.

    ``corrected=False`` gives the literal bound, whose ``I2`` numerator
    term is ``2 (P* - P) c``. ``corrected=True`` uses ``(2 P* - P) c``,
    which is what the triangle step actually yields and is a valid bound
    whenever the majority assumption holds. Undefined ratios are NaN.
    """
    _, _, I1, I2 = inst.sets(k)
    P, Ps, c = inst.P[k], inst.P_star[k], inst.c
    eps = error_size(inst, k)
    eta_hat = _ratio(eps, eps + correct_size(inst, k))
    excess = (2 * Ps[I2] - P[I2]) if corrected else 2 * (Ps[I2] - P[I2])
    num = np.sum(P[I1] * c[I1]) + np.sum(excess * c[I2])
    den = np.sum((P[I1] + Ps[I1]) * c[I1]) + np.sum(2 * Ps[I2] * c[I2])
    return eta_hat, _ratio(float(num), float(den))


def case_of(inst: BoundsInstance, k: int) -> str:
    I, _, _, _ = inst.sets(k)
    below = np.all(inst.P_star[k, I] <= inst.P[k, I])
    above = np.all(inst.P_star[k, I] >= inst.P[k, I])
    if below and above:
        return "exact"
    if below:
        return "case_a"
    if above:
        return "case_b"
    return "mixed"


def class_report(inst: BoundsInstance) -> list[dict]:
    ok = check_assumptions(inst)
    rows = []
    for k in range(inst.d):
        eta_hat, bound = error_rate_bound(inst, k)
        _, corrected = error_rate_bound(inst, k, corrected=True)
        rows.append({
            "class": k,
            "assumption": ok[k],
            "epsilon": error_size(inst, k),
            "eta_hat": eta_hat,
            "bound": bound,
            "corrected_bound": corrected,
            "case": case_of(inst, k),
            "within_bound": bool(eta_hat <= bound) if ok[k] else None,
        })
    return rows


def empirical_instance(pattern, true_treatment, observed_treatment, clusters, d: int | None = None) -> BoundsInstance:
    """Estimate ``(P, P*, c)`` from a labelled simulation.

    Clusters are matched to patterns by maximum overlap before ``P*`` is
    read off the observed labels of each matched cluster.
    """
    pattern = np.asarray(pattern, dtype=np.int64)
    t_true = np.asarray(true_treatment, dtype=np.int64)
    t_obs = np.asarray(observed_treatment, dtype=np.int64)
    clusters = np.asarray(clusters, dtype=np.int64)
    if not len(pattern) == len(t_true) == len(t_obs) == len(clusters):
        raise DataError("all arrays must have the same length")
    n = int(pattern.max()) + 1
    if int(clusters.max()) + 1 != n:
        raise DataError(f"cluster count {int(clusters.max()) + 1} differs from pattern count {n}")
    d = d or int(max(t_true.max(), t_obs.max())) + 1

    overlap = np.zeros((n, n))
    np.add.at(overlap, (pattern, clusters), 1)
    rows, cols = linear_sum_assignment(-overlap)
    to_pattern = np.empty(n, dtype=np.int64)
    to_pattern[cols] = rows
    matched = to_pattern[clusters]

    def proportions(labels, groups):
        M = np.zeros((d, n))
        np.add.at(M, (labels, groups), 1)
        col = M.sum(axis=0)
        return M / np.where(col > 0, col, 1), col

    P, c = proportions(t_true, pattern)
    P_star, col = proportions(t_obs, matched)
    if np.any(col == 0):
        raise DataError("a matched cluster is empty")
    return BoundsInstance(P, P_star, c)


# --------------------------------------------------------------------------
# Monte Carlo


def random_instance(rng: np.random.Generator, max_d: int = 5, max_n: int = 5, zero_prob: float = 0.4) -> BoundsInstance:
    """Sparse random ``P`` mixed towards a random column-stochastic matrix."""
    d = int(rng.integers(2, max_d + 1))
    n = int(rng.integers(2, max_n + 1))
    P = rng.random((d, n)) * (rng.random((d, n)) > zero_prob)
    for j in range(n):
        if P[:, j].sum() == 0:
            P[rng.integers(d), j] = 1.0
    P /= P.sum(axis=0)
    noise = rng.dirichlet(np.ones(d), size=n).T
    mix = rng.random() * 0.6
    P_star = (1 - mix) * P + mix * noise
    P_star /= P_star.sum(axis=0)
    c = rng.integers(1, 1000, size=n).astype(float)
    return BoundsInstance(P, P_star, c)


def monte_carlo(draws: int = 10_000, seed: int = 0, corrected: bool = False, **kw) -> dict:
    """Draw instances until ``draws`` (instance, class) pairs satisfy the
    assumption; count how often ``eta_hat`` exceeds the bound."""
    rng = np.random.default_rng(seed)
    checked = violations = 0
    worst = 0.0
    while checked < draws:
        inst = random_instance(rng, **kw)
        k = int(rng.integers(inst.d))
        if not inst.P[k].any() or not check_assumptions(inst)[k]:
            continue
        eta_hat, bound = error_rate_bound(inst, k, corrected=corrected)
        if math.isnan(bound):
            continue
        checked += 1
        if eta_hat > bound:
            violations += 1
            worst = max(worst, eta_hat - bound)
    return {"draws": checked, "violations": violations, "max_excess": worst}
