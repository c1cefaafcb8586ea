"""Reference values, kept in one JSON file per version."""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

VERSION = "v1"


def load(version: str = VERSION) -> dict:
    text = resources.files(__name__).joinpath(version, "reference_tables.json").read_text()
    return json.loads(text)


@dataclass(frozen=True)
class SamplingTableCheck:
    passed: bool
    computed: np.ndarray
    expected: np.ndarray
    deltas: np.ndarray
    tolerance: float


def sampling_table_check(gamma: float = 0.0, version: str = VERSION) -> SamplingTableCheck:
    """Recompute the sampling probabilities from the reference counts."""
    from ..resample import ResampleParams, sampling_distribution

    fx = load(version)
    W = np.asarray(fx["treatment_cluster_counts"]["values"], dtype=float)
    expected = np.asarray(fx["sampling_probabilities"]["values"])
    tol = fx["sampling_probabilities"]["tolerance"]
    computed = sampling_distribution(W, ResampleParams(gamma=gamma))
    deltas = computed - expected
    return SamplingTableCheck(bool(np.all(np.abs(deltas) <= tol)), computed, expected, deltas, tol)
