"""Second-order gradient boosted regression trees with a multiclass
soft-probability output.

Each round fits one tree per class to the softmax cross-entropy gradient
and hessian, using exact greedy split enumeration. Continuous features
split on midpoints between sorted distinct values; discrete features split
on prefixes of the categories ordered by their G/H ratio.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import Dataset
from .errors import ConfigError, NumericError

CLAMP = 1e-15


@dataclass(frozen=True)
class BoostConfig:
    num_classes: int = 3
    max_depth: int = 7
    learning_rate: float = 0.5
    rounds: int = 10
    reg_lambda: float = 1.0
    reg_alpha: float = 0.0
    min_child_weight: float = 1.0

    def __post_init__(self):
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if self.max_depth < 1:
            raise ConfigError("max_depth must be >= 1")
        if not 0 < self.learning_rate <= 1:
            raise ConfigError("learning_rate must lie in (0, 1]")
        if self.reg_lambda < 0 or self.reg_alpha < 0 or self.min_child_weight < 0:
            raise ConfigError("regularization terms must be >= 0")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")


# --------------------------------------------------------------------------
# objective


def softprob(raw) -> np.ndarray:
    raw = np.asarray(raw, dtype=float)
    if not np.all(np.isfinite(raw)):
        raise NumericError("non-finite raw scores")
    z = np.exp(raw - raw.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def clamp_rows(P) -> np.ndarray:
    """Clamp to [CLAMP, 1 - CLAMP] and renormalize rows."""
    P = np.clip(np.asarray(P, dtype=float), CLAMP, 1 - CLAMP)
    return P / P.sum(axis=1, keepdims=True)


def one_hot(labels, d: int) -> np.ndarray:
    Y = np.zeros((len(labels), d))
    Y[np.arange(len(labels)), labels] = 1.0
    return Y


def mlogloss(Y, P) -> float:
    """Mean multiclass cross-entropy of one-hot ``Y`` under probabilities ``P``."""
    Y = np.asarray(Y, dtype=float)
    P = np.asarray(P, dtype=float)
    if Y.shape != P.shape:
        raise ValueError(f"shape mismatch: {Y.shape} vs {P.shape}")
    if not (np.all((Y == 0) | (Y == 1)) and np.all(Y.sum(axis=1) == 1)):
        raise ValueError("Y rows must be one-hot")
    P = np.clip(P, CLAMP, 1 - CLAMP)
    return float(-np.sum(Y * np.log(P)) / Y.shape[0])


def gradients(Y, P) -> tuple[np.ndarray, np.ndarray]:
    """Softmax cross-entropy derivatives w.r.t. raw scores (diagonal hessian)."""
    Y = np.asarray(Y, dtype=float)
    P = np.asarray(P, dtype=float)
    return P - Y, P * (1.0 - P)


# --------------------------------------------------------------------------
# trees


@dataclass
class Node:
    weight: float = 0.0
    feature: int = -1
    threshold: float | None = None
    categories: frozenset | None = None
    left: "Node | None" = None
    right: "Node | None" = None
    default_left: bool = True
    gain: float = 0.0
    seen: frozenset | None = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    def depth(self) -> int:
        return 0 if self.is_leaf else 1 + max(self.left.depth(), self.right.depth())


@dataclass(frozen=True)
class Split:
    gain: float
    feature: int
    threshold: float | None = None
    categories: frozenset | None = None
    default_left: bool = True


def _soft(G, alpha):
    return np.sign(G) * np.maximum(np.abs(G) - alpha, 0.0)


def _score(G, H, lam, alpha):
    t = _soft(G, alpha)
    return t * t / (H + lam)


def leaf_weight(G: float, H: float, cfg: BoostConfig) -> float:
    return float(-_soft(G, cfg.reg_alpha) / (H + cfg.reg_lambda) * cfg.learning_rate)


class Matrix:
    """Feature view: continuous block first, then discrete codes."""

    def __init__(self, continuous, discrete):
        self.continuous = np.asarray(continuous, dtype=float)
        self.discrete = np.asarray(discrete, dtype=np.int64)
        self.n_cont = self.continuous.shape[1]
        self.n_features = self.n_cont + self.discrete.shape[1]

    @classmethod
    def of(cls, data: Dataset) -> "Matrix":
        return cls(data.continuous, data.discrete)

    def is_discrete(self, f: int) -> bool:
        return f >= self.n_cont

    def values(self, f: int) -> np.ndarray:
        return self.discrete[:, f - self.n_cont] if self.is_discrete(f) else self.continuous[:, f]


def split_gain(GL, HL, G, H, cfg: BoostConfig):
    lam, a = cfg.reg_lambda, cfg.reg_alpha
    return 0.5 * (_score(GL, HL, lam, a) + _score(G - GL, H - HL, lam, a) - _score(G, H, lam, a))


def _cont_candidates(x, g, h, cfg):
    order = np.argsort(x, kind="stable")
    xs, gs, hs = x[order], g[order], h[order]
    GL, HL = np.cumsum(gs)[:-1], np.cumsum(hs)[:-1]
    G, H = gs.sum(), hs.sum()
    valid = (xs[:-1] < xs[1:]) & (HL >= cfg.min_child_weight) & (H - HL >= cfg.min_child_weight)
    if not valid.any():
        return None
    gains = np.where(valid, split_gain(GL, HL, G, H, cfg), -np.inf)
    k = int(np.argmax(gains))
    lo, hi = xs[k], xs[k + 1]
    thr = lo + (hi - lo) / 2.0
    if not lo < thr <= hi:
        thr = hi
    n_left = k + 1
    return float(gains[k]), thr, n_left >= len(x) - n_left


def _disc_candidates(x, g, h, cfg):
    cats, inv = np.unique(x, return_inverse=True)
    if len(cats) < 2:
        return None
    Gc = np.bincount(inv, weights=g)
    Hc = np.bincount(inv, weights=h)
    Nc = np.bincount(inv)
    order = np.lexsort((cats, Gc / np.maximum(Hc, 1e-300)))
    GL, HL, NL = np.cumsum(Gc[order])[:-1], np.cumsum(Hc[order])[:-1], np.cumsum(Nc[order])[:-1]
    G, H = Gc.sum(), Hc.sum()
    valid = (HL >= cfg.min_child_weight) & (H - HL >= cfg.min_child_weight)
    if not valid.any():
        return None
    gains = np.where(valid, split_gain(GL, HL, G, H, cfg), -np.inf)
    k = int(np.argmax(gains))
    left = frozenset(int(c) for c in cats[order[: k + 1]])
    return float(gains[k]), left, NL[k] >= len(x) - NL[k]


def best_split(X: Matrix, g, h, idx, cfg: BoostConfig) -> Split | None:
    """Highest-gain split of the rows ``idx``; ties keep the lower feature
    index, then the lower threshold (or shorter category prefix)."""
    best = None
    for f in range(X.n_features):
        x = X.values(f)[idx]
        if X.is_discrete(f):
            res = _disc_candidates(x, g[idx], h[idx], cfg)
            if res is None:
                continue
            gain, cats, dleft = res
            cand = Split(gain, f, categories=cats, default_left=bool(dleft))
        else:
            res = _cont_candidates(x, g[idx], h[idx], cfg)
            if res is None:
                continue
            gain, thr, dleft = res
            cand = Split(gain, f, threshold=float(thr), default_left=bool(dleft))
        if best is None or cand.gain > best.gain:
            best = cand
    return best


def goes_left(X: Matrix, node: Node, idx) -> np.ndarray:
    x = X.values(node.feature)[idx]
    if node.categories is not None:
        return np.isin(x, list(node.categories))
    return x < node.threshold


def grow_tree(X: Matrix, g, h, cfg: BoostConfig) -> Node:
    def build(idx, depth):
        G, H = float(g[idx].sum()), float(h[idx].sum())
        node = Node(weight=leaf_weight(G, H, cfg))
        if depth >= cfg.max_depth:
            return node
        s = best_split(X, g, h, idx, cfg)
        if s is None or not s.gain > 0:
            return node
        node.feature, node.threshold, node.categories = s.feature, s.threshold, s.categories
        node.default_left, node.gain = s.default_left, s.gain
        mask = goes_left(X, node, idx)
        node.left = build(idx[mask], depth + 1)
        node.right = build(idx[~mask], depth + 1)
        return node

    return build(np.arange(len(g)), 0)


def tree_predict(node: Node, X: Matrix, idx=None) -> np.ndarray:
    """Leaf weight per row. Categories never seen at a node follow ``default_left``."""
    m = X.continuous.shape[0] if X.n_cont else X.discrete.shape[0]
    out = np.zeros(m)
    stack = [(node, np.arange(m) if idx is None else idx)]
    while stack:
        nd, rows = stack.pop()
        if nd.is_leaf or rows.size == 0:
            out[rows] = nd.weight
            continue
        if nd.categories is not None:
            x = X.values(nd.feature)[rows]
            left = np.isin(x, list(nd.categories))
            if nd.seen is not None:
                unseen = ~np.isin(x, list(nd.seen))
                left = np.where(unseen, nd.default_left, left)
        else:
            left = X.values(nd.feature)[rows] < nd.threshold
        stack.append((nd.left, rows[left]))
        stack.append((nd.right, rows[~left]))
    return out


# --------------------------------------------------------------------------
# model


@dataclass(eq=False)
class BoostedModel:
    config: BoostConfig
    trees: list[list[Node]]  # rounds x classes
    base_score: float = 0.0
    n_continuous: int = 0
    n_discrete: int = 0
    history: list[float] = field(default_factory=list)

    def raw_scores(self, X: Matrix) -> np.ndarray:
        m = X.continuous.shape[0]
        raw = np.full((m, self.config.num_classes), self.base_score)
        for round_trees in self.trees:
            for k, t in enumerate(round_trees):
                raw[:, k] += tree_predict(t, X)
        return raw

    def to_dict(self) -> dict:
        return {
            "config": asdict(self.config),
            "base_score": self.base_score,
            "n_continuous": self.n_continuous,
            "n_discrete": self.n_discrete,
            "history": self.history,
            "trees": [
                {"round": r, "class": k, "nodes": _dump_nodes(t)}
                for r, rt in enumerate(self.trees) for k, t in enumerate(rt)
            ],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "BoostedModel":
        cfg = BoostConfig(**doc["config"])
        n_rounds = 1 + max((t["round"] for t in doc["trees"]), default=-1)
        trees = [[None] * cfg.num_classes for _ in range(n_rounds)]
        for t in doc["trees"]:
            trees[t["round"]][t["class"]] = _load_nodes(t["nodes"])
        return cls(cfg, trees, doc["base_score"], doc["n_continuous"], doc["n_discrete"],
                   list(doc.get("history", [])))

    @classmethod
    def loads(cls, text: str) -> "BoostedModel":
        return cls.from_dict(json.loads(text))


def _dump_nodes(root: Node) -> list[dict]:
    out = []

    def visit(nd):
        i = len(out)
        out.append(None)
        if nd.is_leaf:
            out[i] = {"id": i, "leaf": nd.weight}
            return i
        rec = {"id": i, "feature": nd.feature, "default_left": nd.default_left, "gain": nd.gain,
               "weight": nd.weight}
        if nd.categories is not None:
            rec["categories"] = sorted(nd.categories)
            rec["seen"] = sorted(nd.seen or ())
        else:
            rec["threshold"] = nd.threshold
        rec["left"] = visit(nd.left)
        rec["right"] = visit(nd.right)
        out[i] = rec
        return i

    visit(root)
    return out


def _load_nodes(recs: list[dict]) -> Node:
    def make(i):
        r = recs[i]
        if "leaf" in r:
            return Node(weight=r["leaf"])
        nd = Node(weight=r.get("weight", 0.0), feature=r["feature"], default_left=r["default_left"],
                  gain=r.get("gain", 0.0), left=make(r["left"]), right=make(r["right"]))
        if "categories" in r:
            nd.categories = frozenset(r["categories"])
            nd.seen = frozenset(r["seen"])
        else:
            nd.threshold = r["threshold"]
        return nd

    return make(0)


def _mark_seen(node: Node, X: Matrix, idx):
    """Record the categories present at each categorical node during training."""
    if node.is_leaf:
        return
    if node.categories is not None:
        node.seen = frozenset(int(v) for v in np.unique(X.values(node.feature)[idx]))
    left = goes_left(X, node, idx)
    _mark_seen(node.left, X, idx[left])
    _mark_seen(node.right, X, idx[~left])


def train(data: Dataset, cfg: BoostConfig | None = None, seed: int = 0) -> BoostedModel:
    """Fit ``cfg.rounds`` rounds of one tree per class.

    ``seed`` is accepted for interface symmetry; training uses no randomness.
    """
    cfg = cfg or BoostConfig(num_classes=data.d)
    if cfg.num_classes != data.d:
        raise ConfigError(f"config has {cfg.num_classes} classes, data has {data.d}")
    return fit(Matrix.of(data), data.treatment, cfg)


def fit(X: Matrix, labels, cfg: BoostConfig) -> BoostedModel:
    labels = np.asarray(labels, dtype=np.int64)
    m = len(labels)
    if m < 2:
        raise ValueError("need at least two samples")
    Y = one_hot(labels, cfg.num_classes)
    raw = np.zeros((m, cfg.num_classes))
    history = [mlogloss(Y, softprob(raw))]
    trees = []
    rows = np.arange(m)
    for _ in range(cfg.rounds):
        P = softprob(raw)
        g_all, h_all = gradients(Y, P)
        round_trees = []
        for k in range(cfg.num_classes):
            t = grow_tree(X, g_all[:, k], h_all[:, k], cfg)
            _mark_seen(t, X, rows)
            round_trees.append(t)
        for k, t in enumerate(round_trees):
            raw[:, k] += tree_predict(t, X)
        trees.append(round_trees)
        history.append(mlogloss(Y, softprob(raw)))
    return BoostedModel(cfg, trees, 0.0, X.n_cont, X.discrete.shape[1], history)


def predict(model: BoostedModel, data: Dataset | Matrix) -> np.ndarray:
    X = data if isinstance(data, Matrix) else Matrix.of(data)
    if X.n_cont != model.n_continuous or X.discrete.shape[1] != model.n_discrete:
        raise ConfigError("feature layout differs from the training data")
    return clamp_rows(softprob(model.raw_scores(X)))
