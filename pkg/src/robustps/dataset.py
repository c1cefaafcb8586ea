"""Mixed-type tabular datasets with a treatment label.

Continuous covariates are kept as float64, discrete covariates as dense
integer codes (first-appearance order at ingest), and the treatment as a
code in ``[0, d)``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError

ROLES = ("continuous", "discrete", "treatment", "ignore")


@dataclass(frozen=True)
class Column:
    name: str
    role: str


@dataclass(frozen=True)
class Schema:
    columns: tuple[Column, ...]

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate column names in schema: {names}")
        for c in self.columns:
            if c.role not in ROLES:
                raise ConfigError(f"column {c.name!r}: unknown role {c.role!r}")
        n_treat = sum(c.role == "treatment" for c in self.columns)
        if n_treat != 1:
            raise ConfigError(f"schema needs exactly one treatment column, got {n_treat}")
        if not (self.continuous or self.discrete):
            raise ConfigError("schema has no covariate columns")

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[str, str]]) -> "Schema":
        return cls(tuple(Column(n, r) for n, r in pairs))

    @classmethod
    def from_dict(cls, doc: dict) -> "Schema":
        try:
            return cls(tuple(Column(c["name"], c["role"]) for c in doc["columns"]))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed schema document: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "Schema":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {"columns": [{"name": c.name, "role": c.role} for c in self.columns]}

    def _names(self, role: str) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns if c.role == role)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    @property
    def continuous(self) -> tuple[str, ...]:
        return self._names("continuous")

    @property
    def discrete(self) -> tuple[str, ...]:
        return self._names("discrete")

    @property
    def ignored(self) -> tuple[str, ...]:
        return self._names("ignore")

    @property
    def treatment(self) -> str:
        return self._names("treatment")[0]

    @property
    def covariates(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns if c.role in ("continuous", "discrete"))


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable validated dataset.

    ``categories`` maps each discrete column to its original labels indexed
    by code; ``treatment_labels`` does the same for the treatment. ``source``
    holds the provenance row index into the dataset this one was derived from.
    """

    schema: Schema
    continuous: np.ndarray
    discrete: np.ndarray
    treatment: np.ndarray
    categories: dict[str, tuple[str, ...]]
    treatment_labels: tuple[str, ...]
    corrupted: np.ndarray = None
    pattern: np.ndarray | None = None
    source: np.ndarray = None
    extras: dict[str, tuple[str, ...]] = field(default_factory=dict)
    dropped: int = 0

    def __post_init__(self):
        m = len(self.treatment)
        cont = np.asarray(self.continuous, dtype=np.float64).reshape(m, len(self.schema.continuous))
        disc = np.asarray(self.discrete, dtype=np.int64).reshape(m, len(self.schema.discrete))
        treat = np.asarray(self.treatment, dtype=np.int64)
        d = len(self.treatment_labels)
        if m < d:
            raise DataError(f"m={m} is smaller than the number of treatment classes d={d}")
        if m and (treat.min() < 0 or treat.max() >= d):
            raise DataError("treatment codes out of range")
        counts = np.bincount(treat, minlength=d)
        if np.any(counts == 0):
            missing = [self.treatment_labels[i] for i in np.flatnonzero(counts == 0)]
            raise DataError(f"treatment classes absent from data: {missing}")
        if not np.all(np.isfinite(cont)):
            raise DataError("non-finite continuous values")
        corrupted = np.zeros(m, bool) if self.corrupted is None else np.asarray(self.corrupted, bool)
        source = np.arange(m) if self.source is None else np.asarray(self.source, np.int64)
        object.__setattr__(self, "continuous", _readonly(cont))
        object.__setattr__(self, "discrete", _readonly(disc))
        object.__setattr__(self, "treatment", _readonly(treat))
        object.__setattr__(self, "corrupted", _readonly(corrupted))
        object.__setattr__(self, "source", _readonly(source))
        if self.pattern is not None:
            object.__setattr__(self, "pattern", _readonly(np.asarray(self.pattern, np.int64)))

    @property
    def m(self) -> int:
        return len(self.treatment)

    @property
    def d(self) -> int:
        return len(self.treatment_labels)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.treatment, minlength=self.d)

    def column(self, name: str) -> np.ndarray:
        if name in self.schema.continuous:
            return self.continuous[:, self.schema.continuous.index(name)]
        if name in self.schema.discrete:
            return self.discrete[:, self.schema.discrete.index(name)]
        if name == self.schema.treatment:
            return self.treatment
        raise KeyError(name)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(
            schema=self.schema,
            continuous=self.continuous[idx],
            discrete=self.discrete[idx],
            treatment=self.treatment[idx],
            categories=self.categories,
            treatment_labels=self.treatment_labels,
            corrupted=self.corrupted[idx],
            pattern=None if self.pattern is None else self.pattern[idx],
            source=self.source[idx],
            extras={k: tuple(v[i] for i in idx) for k, v in self.extras.items()},
        )

    def with_treatment(self, treatment, corrupted=None) -> "Dataset":
        return Dataset(
            schema=self.schema,
            continuous=self.continuous,
            discrete=self.discrete,
            treatment=treatment,
            categories=self.categories,
            treatment_labels=self.treatment_labels,
            corrupted=self.corrupted if corrupted is None else corrupted,
            pattern=self.pattern,
            source=self.source,
            extras=self.extras,
            dropped=self.dropped,
        )

    def same_as(self, other: "Dataset") -> bool:
        return (
            self.schema == other.schema
            and np.array_equal(self.continuous, other.continuous)
            and np.array_equal(self.discrete, other.discrete)
            and np.array_equal(self.treatment, other.treatment)
            and self.categories == other.categories
            and self.treatment_labels == other.treatment_labels
            and self.extras == other.extras
        )


# --------------------------------------------------------------------------
# CSV ingest / export


def _treatment_order(values: list[str]) -> tuple[str, ...]:
    uniq = sorted(set(values))
    try:
        return tuple(sorted(uniq, key=float))
    except ValueError:
        return tuple(uniq)


def ingest(csv_path: str | Path, schema: Schema) -> Dataset:
    """Read a CSV against ``schema``; rows with an empty covariate cell are dropped."""
    path = Path(csv_path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        if sorted(header) != sorted(schema.names):
            raise DataError(f"header {header} does not match schema columns {list(schema.names)}")
        pos = {name: header.index(name) for name in schema.names}
        rows = [r for r in reader if r]

    required = schema.covariates + (schema.treatment,)
    kept, dropped = [], 0
    for lineno, r in enumerate(rows, start=2):
        if len(r) != len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(r)}")
        if any(r[pos[n]].strip() == "" for n in required):
            dropped += 1
            continue
        kept.append(r)
    if not kept:
        raise DataError(f"{path}: zero rows after dropping incomplete records")

    cont = np.empty((len(kept), len(schema.continuous)))
    for j, name in enumerate(schema.continuous):
        for i, r in enumerate(kept):
            try:
                cont[i, j] = float(r[pos[name]])
            except ValueError:
                raise DataError(f"column {name!r}: non-numeric value {r[pos[name]]!r}") from None

    categories: dict[str, tuple[str, ...]] = {}
    disc = np.empty((len(kept), len(schema.discrete)), dtype=np.int64)
    for j, name in enumerate(schema.discrete):
        codes: dict[str, int] = {}
        for i, r in enumerate(kept):
            disc[i, j] = codes.setdefault(r[pos[name]].strip(), len(codes))
        categories[name] = tuple(codes)

    raw_t = [r[pos[schema.treatment]].strip() for r in kept]
    labels = _treatment_order(raw_t)
    lookup = {v: k for k, v in enumerate(labels)}
    treat = np.array([lookup[v] for v in raw_t], dtype=np.int64)
    extras = {n: tuple(r[pos[n]] for r in kept) for n in schema.ignored}
    return Dataset(schema, cont, disc, treat, categories, labels, extras=extras, dropped=dropped)


def format_float(x: float) -> str:
    return repr(float(x)) if math.isfinite(x) else str(x)


def export_csv(data: Dataset, csv_path: str | Path) -> None:
    """Write ``data`` in schema column order; re-ingesting reproduces it exactly."""
    sch = data.schema
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(sch.names)
        for i in range(data.m):
            row = []
            for c in sch.columns:
                if c.role == "continuous":
                    row.append(format_float(data.continuous[i, sch.continuous.index(c.name)]))
                elif c.role == "discrete":
                    code = data.discrete[i, sch.discrete.index(c.name)]
                    row.append(data.categories[c.name][code])
                elif c.role == "treatment":
                    row.append(data.treatment_labels[data.treatment[i]])
                else:
                    row.append(data.extras[c.name][i])
            w.writerow(row)


# --------------------------------------------------------------------------
# Label corruption


@dataclass(frozen=True)
class CorruptionSpec:
    rate: float
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.rate <= 0.5:
            raise ConfigError(f"corruption rate must lie in [0, 0.5], got {self.rate}")


def corrupt(data: Dataset, spec: CorruptionSpec) -> Dataset:
    """Flip each label with probability ``spec.rate`` to a uniformly chosen other class."""
    if data.d < 2:
        raise DataError("corruption needs at least two treatment classes")
    rng = np.random.default_rng(spec.seed)
    flip = rng.random(data.m) < spec.rate
    offset = rng.integers(1, data.d, size=data.m)
    new = np.where(flip, (data.treatment + offset) % data.d, data.treatment)
    return data.with_treatment(new, corrupted=flip)


def corruption_manifest(data: Dataset, spec: CorruptionSpec) -> dict:
    return {
        "seed": spec.seed,
        "rate": spec.rate,
        "flipped": [int(i) for i in np.flatnonzero(data.corrupted)],
    }


# --------------------------------------------------------------------------
# Synthetic generator


@dataclass(frozen=True)
class Pattern:
    """One latent sample group: Gaussian continuous block, categorical discrete columns."""

    means: tuple[float, ...]
    spreads: tuple[float, ...]
    category_probs: tuple[tuple[float, ...], ...] = ()


@dataclass(frozen=True)
class SyntheticSpec:
    continuous: tuple[str, ...]
    discrete: tuple[str, ...]
    patterns: tuple[Pattern, ...]
    sizes: tuple[int, ...]
    assignment: tuple[tuple[float, ...], ...]  # d x n, columns sum to 1
    treatment: str = "treatment"
    exact_counts: bool = False

    def __post_init__(self):
        P = np.asarray(self.assignment, dtype=float)
        n = len(self.patterns)
        if P.ndim != 2 or P.shape[1] != n:
            raise ConfigError(f"assignment must be d x {n}")
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=0) - 1.0) > 1e-9):
            raise ConfigError("assignment columns must be probability vectors")
        if len(self.sizes) != n or any(c <= 0 for c in self.sizes):
            raise ConfigError("need one positive size per pattern")
        for p in self.patterns:
            if len(p.means) != len(self.continuous) or len(p.spreads) != len(self.continuous):
                raise ConfigError("pattern continuous block does not match column list")
            if len(p.category_probs) != len(self.discrete):
                raise ConfigError("pattern discrete block does not match column list")

    @property
    def d(self) -> int:
        return len(self.assignment)

    def schema(self) -> Schema:
        pairs = [(c, "continuous") for c in self.continuous]
        pairs += [(c, "discrete") for c in self.discrete]
        pairs.append((self.treatment, "treatment"))
        return Schema.from_pairs(pairs)

    def to_dict(self) -> dict:
        return {
            "continuous": list(self.continuous),
            "discrete": list(self.discrete),
            "patterns": [
                {"means": list(p.means), "spreads": list(p.spreads),
                 "category_probs": [list(q) for q in p.category_probs]}
                for p in self.patterns
            ],
            "sizes": list(self.sizes),
            "assignment": [list(r) for r in self.assignment],
            "treatment": self.treatment,
            "exact_counts": self.exact_counts,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SyntheticSpec":
        return cls(
            continuous=tuple(doc["continuous"]),
            discrete=tuple(doc["discrete"]),
            patterns=tuple(
                Pattern(tuple(p["means"]), tuple(p["spreads"]),
                        tuple(tuple(q) for q in p.get("category_probs", ())))
                for p in doc["patterns"]
            ),
            sizes=tuple(int(c) for c in doc["sizes"]),
            assignment=tuple(tuple(r) for r in doc["assignment"]),
            treatment=doc.get("treatment", "treatment"),
            exact_counts=bool(doc.get("exact_counts", False)),
        )


def hamilton(total: int, weights) -> np.ndarray:
    """Largest-remainder apportionment of ``total``; ties go to the lower index."""
    w = np.asarray(weights, dtype=float)
    if total == 0 or w.sum() <= 0:
        return np.zeros(len(w), dtype=np.int64)
    share = total * w / w.sum()
    base = np.floor(share).astype(np.int64)
    rest = total - int(base.sum())
    order = sorted(range(len(w)), key=lambda j: (-(share[j] - base[j]), j))
    for j in order[:rest]:
        base[j] += 1
    return base


def synthesize(gen: SyntheticSpec, seed: int = 0) -> Dataset:
    """Draw ``sizes[j]`` samples from pattern ``j`` and assign treatments by column ``j``.

    With ``exact_counts`` the per-(treatment, pattern) counts are the Hamilton
    apportionment of ``P[:, j] * sizes[j]`` instead of multinomial draws.
    """
    rng = np.random.default_rng(seed)
    P = np.asarray(gen.assignment, dtype=float)
    cont, disc, treat, pat = [], [], [], []
    for j, (p, c) in enumerate(zip(gen.patterns, gen.sizes)):
        cont.append(rng.normal(p.means, p.spreads, size=(c, len(gen.continuous))))
        cols = [rng.choice(len(q), size=c, p=np.asarray(q) / np.sum(q)) for q in p.category_probs]
        disc.append(np.stack(cols, axis=1) if cols else np.zeros((c, 0), np.int64))
        if gen.exact_counts:
            counts = hamilton(c, P[:, j])
            t = rng.permutation(np.repeat(np.arange(gen.d), counts))
        else:
            t = rng.choice(gen.d, size=c, p=P[:, j])
        treat.append(t)
        pat.append(np.full(c, j))
    order = rng.permutation(sum(gen.sizes))
    cont = np.concatenate(cont)[order]
    disc = np.concatenate(disc)[order]
    treat = np.concatenate(treat)[order]
    pat = np.concatenate(pat)[order]

    # codes renumbered by first appearance so that export/ingest round-trips
    categories = {}
    for j, name in enumerate(gen.discrete):
        _, first = np.unique(disc[:, j], return_index=True)
        seen = disc[np.sort(first), j]
        remap = {int(v): k for k, v in enumerate(seen)}
        disc[:, j] = [remap[int(v)] for v in disc[:, j]]
        categories[name] = tuple(str(int(v)) for v in seen)
    labels = tuple(str(i + 1) for i in range(gen.d))
    return Dataset(gen.schema(), cont, disc, treat, categories, labels, pattern=pat)


# --------------------------------------------------------------------------
# Presets

SEER_CONTINUOUS = ("age", "eod10_pn", "cs_size", "cs_ext", "cs_node", "survive_month")
SEER_DISCRETE = ("sex", "race", "marital", "grade", "d_ajcc_s")
REPORTED_COVARIATES = ("age", "race", "cs_node", "cs_size", "d_ajcc_s", "survive_month")

def _seer_patterns(shift: float) -> tuple[Pattern, ...]:
    # race carries no pattern signal; everything else moves with the pattern
    race = (0.8, 0.12, 0.08)
    specs = [
        ((66, 2, 35, 40, 1, 8), (10, 3, 15, 20, 1, 6),
         ((0.5, 0.5), race, (0.55, 0.3, 0.15), (0.2, 0.5, 0.3), (0.6, 0.3, 0.1))),
        ((64, 6, 40, 50, 3, 14), (10, 4, 18, 20, 1.5, 10),
         ((0.5, 0.5), race, (0.6, 0.25, 0.15), (0.3, 0.4, 0.3), (0.2, 0.5, 0.3))),
        ((62, 10, 45, 60, 5, 20), (10, 5, 20, 20, 2, 12),
         ((0.5, 0.5), race, (0.65, 0.25, 0.1), (0.4, 0.4, 0.2), (0.1, 0.3, 0.6))),
    ]
    out = []
    centre = np.mean([s[0] for s in specs], axis=0)
    for means, spreads, cats in specs:
        m = centre + shift * (np.asarray(means, float) - centre)
        out.append(Pattern(tuple(float(v) for v in m), tuple(float(v) for v in spreads), cats))
    return tuple(out)


def seer_like() -> SyntheticSpec:
    """SEER-shaped generator reproducing the reference treatment/cluster counts exactly."""
    from .fixtures import load

    W = np.asarray(load()["treatment_cluster_counts"]["values"], dtype=float)
    sizes = tuple(int(v) for v in W.sum(axis=0))
    P = W / W.sum(axis=0)
    return SyntheticSpec(
        continuous=SEER_CONTINUOUS, discrete=SEER_DISCRETE, patterns=_seer_patterns(1.0),
        sizes=sizes, assignment=tuple(tuple(r) for r in P), exact_counts=True,
    )


def confounded(m: int = 3000, strength: float = 0.8, shift: float = 1.0) -> SyntheticSpec:
    """SEER-shaped generator where pattern j is mostly treated with treatment j."""
    off = (1.0 - strength) / 2
    P = [[strength if i == j else off for j in range(3)] for i in range(3)]
    sizes = tuple(int(v) for v in hamilton(m, [1, 1, 1]))
    return SyntheticSpec(
        continuous=SEER_CONTINUOUS, discrete=SEER_DISCRETE, patterns=_seer_patterns(shift),
        sizes=sizes, assignment=tuple(tuple(r) for r in P),
    )


def separated(m: int = 1500, gap: float = 10.0) -> SyntheticSpec:
    """Three patterns far apart in the continuous block, identity assignment."""
    centres = ((0.0, 0.0), (gap, 0.0), (0.0, gap))
    cats = (
        ((0.8, 0.1, 0.1), (0.6, 0.4)),
        ((0.1, 0.8, 0.1), (0.5, 0.5)),
        ((0.1, 0.1, 0.8), (0.4, 0.6)),
    )
    patterns = tuple(Pattern(c, (1.0, 1.0), q) for c, q in zip(centres, cats))
    sizes = tuple(int(v) for v in hamilton(m, [1, 1, 1]))
    I = tuple(tuple(1.0 if i == j else 0.0 for j in range(3)) for i in range(3))
    return SyntheticSpec(("x1", "x2"), ("c1", "c2"), patterns, sizes, I)


PRESETS = {"seer_like": seer_like, "confounded": confounded, "separated": separated}
