"""Inverse-propensity (ATE) weighting and pairwise standardized bias."""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import Dataset
from .errors import DataError

PROPENSITY_FLOOR = 1e-6


def ate_weights(P, labels) -> np.ndarray:
    """``1 / P[i, t_i]`` with the propensity floored at ``PROPENSITY_FLOOR``."""
    P = np.asarray(P, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    p = P[np.arange(len(labels)), labels]
    return 1.0 / np.maximum(p, PROPENSITY_FLOOR)


def _wmean_var(x, w):
    W = w.sum()
    mu = float(np.sum(w * x) / W)
    var = float(np.sum(w * (x - mu) ** 2) / W)
    return mu, var


def standardized_bias(x, w, labels, pair: tuple[int, int]) -> float:
    """``|mu_a - mu_b| / sqrt((s2_a + s2_b) / 2)`` with frequency-weighted moments.

    Zero pooled variance gives 0 for equal means and ``inf`` otherwise.
    """
    x = np.asarray(x, dtype=float)
    w = np.ones_like(x) if w is None else np.asarray(w, dtype=float)
    labels = np.asarray(labels)
    a, b = pair
    ia, ib = labels == a, labels == b
    if not ia.any() or not ib.any():
        raise DataError(f"empty group in pair {pair}")
    mu_a, va = _wmean_var(x[ia], w[ia])
    mu_b, vb = _wmean_var(x[ib], w[ib])
    diff = abs(mu_a - mu_b)
    pooled = math.sqrt((va + vb) / 2.0)
    if pooled == 0.0:
        return 0.0 if diff == 0.0 else math.inf
    return diff / pooled


def categorical_bias(codes, w, labels, pair, n_categories: int | None = None) -> list[float]:
    """Standardized bias of each category indicator."""
    codes = np.asarray(codes)
    k = int(codes.max()) + 1 if n_categories is None else n_categories
    return [standardized_bias((codes == c).astype(float), w, labels, pair) for c in range(k)]


@dataclass(frozen=True)
class BiasRow:
    pair: tuple[int, int]
    covariate: str
    category: str | None  # None for continuous; "max" for the discrete summary
    sb_weighted: float
    sb_unweighted: float

    @property
    def degenerate(self) -> bool:
        return math.isinf(self.sb_weighted) or math.isinf(self.sb_unweighted)


@dataclass(eq=False)
class BiasReport:
    pairs: list[tuple[int, int]]
    rows: list[BiasRow]
    clamped_rows: list[int] = field(default_factory=list)

    def summary(self, pair) -> dict[str, tuple[float, float]]:
        """Per covariate ``(weighted, unweighted)``; discrete covariates use their max row."""
        out = {}
        for r in self.rows:
            if tuple(r.pair) == tuple(pair) and r.category in (None, "max"):
                out[r.covariate] = (r.sb_weighted, r.sb_unweighted)
        return out

    def to_dict(self) -> dict:
        return {
            "pairs": [list(p) for p in self.pairs],
            "rows": [dict(asdict(r), pair=list(r.pair), degenerate=r.degenerate) for r in self.rows],
            "clamped_rows": self.clamped_rows,
        }


def bias_report(data: Dataset, P, covariates=None, labels=None) -> BiasReport:
    """Weighted (ATE weights from ``P``) and unweighted SB for every treatment pair.

    ``labels`` overrides ``data.treatment``; the pipeline passes the
    authentic labels when the training labels were corrupted.
    """
    covariates = list(data.schema.covariates if covariates is None else covariates)
    for c in covariates:
        if c not in data.schema.covariates:
            raise DataError(f"unknown covariate {c!r}")
    labels = data.treatment if labels is None else np.asarray(labels, dtype=np.int64)
    P = np.asarray(P, dtype=float)
    w = ate_weights(P, labels)
    ones = np.ones(data.m)
    clamped = np.flatnonzero(P[np.arange(data.m), labels] < PROPENSITY_FLOOR).tolist()
    pairs = list(itertools.combinations(range(data.d), 2))
    rows = []
    for pair in pairs:
        for name in covariates:
            x = data.column(name)
            if name in data.schema.continuous:
                rows.append(BiasRow(pair, name, None,
                                    standardized_bias(x, w, labels, pair),
                                    standardized_bias(x, ones, labels, pair)))
                continue
            cats = data.categories[name]
            sw = categorical_bias(x, w, labels, pair, len(cats))
            su = categorical_bias(x, ones, labels, pair, len(cats))
            rows += [BiasRow(pair, name, cats[c], sw[c], su[c]) for c in range(len(cats))]
            rows.append(BiasRow(pair, name, "max", max(sw), max(su)))
    return BiasReport(pairs, rows, clamped)


def format_table(results: dict[str, dict[str, float]], covariates, title: str = "") -> str:
    """Aligned plain-text table: one line per method, one column per covariate."""
    covariates = list(covariates)
    width = max([len(k) for k in results] + [8])
    cols = [max(len(c), 8) for c in covariates]
    lines = [title] if title else []
    lines.append(" " * width + " | " + " | ".join(c.rjust(n) for c, n in zip(covariates, cols)))
    lines.append("-" * len(lines[-1]))
    for label, vals in results.items():
        cells = [f"{vals[c]:.4f}".rjust(n) for c, n in zip(covariates, cols)]
        lines.append(label.ljust(width) + " | " + " | ".join(cells))
    return "\n".join(lines) + "\n"


def comparison_table(reports: dict[str, BiasReport], pair, covariates, labels=None) -> str:
    """Tables in the layout: processed / original (weighted) and the unweighted raw row."""
    results = {}
    unweighted = None
    for label, rep in reports.items():
        s = rep.summary(pair)
        results[label] = {c: s[c][0] for c in covariates}
        unweighted = {c: s[c][1] for c in covariates}
    if unweighted is not None:
        results["Raw data without weighting"] = unweighted
    names = labels or pair
    title = f"Standardized bias between treatment group {names[0]} and {names[1]}"
    return format_table(results, covariates, title)
