"""KNN and second-order gradient-boosted tree baselines."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels, container
from .flowdata import FlowTable


class BaselineError(ValueError):
    pass


@dataclass
class TabularEncoder:
    """Standardised numeric columns plus one-hot categoricals.

    Statistics come from the training table only.  Zero-variance numeric
    columns are dropped.  Unknown categories encode as all-zero (KNN) or
    NaN (GBDT, routed to the default child).
    """

    mean: np.ndarray
    std: np.ndarray
    keep: np.ndarray
    vocabs: list[list[str]]

    @classmethod
    def fit(cls, table: FlowTable) -> "TabularEncoder":
        if len(table) == 0:
            raise BaselineError("empty training set")
        mean = table.numeric.mean(axis=0)
        std = table.numeric.std(axis=0)
        vocabs = [sorted({str(s) for s in table.categorical[:, j]})
                  for j in range(table.categorical.shape[1])]
        return cls(mean, std, std > 0, vocabs)

    @property
    def width(self) -> int:
        return int(self.keep.sum()) + sum(len(v) for v in self.vocabs)

    def transform(self, table: FlowTable, unknown: float = 0.0) -> np.ndarray:
        num = (table.numeric[:, self.keep] - self.mean[self.keep]) / self.std[self.keep]
        parts = [num]
        for j, vocab in enumerate(self.vocabs):
            lookup = {s: i for i, s in enumerate(vocab)}
            codes = np.array([lookup.get(str(s), -1) for s in table.categorical[:, j]], dtype=np.int64)
            oh = np.zeros((len(table), len(vocab)))
            known = codes >= 0
            oh[np.flatnonzero(known), codes[known]] = 1.0
            oh[~known] = unknown
            parts.append(oh)
        return np.concatenate(parts, axis=1) if parts else np.zeros((len(table), 0))

    def state(self):
        return ({"vocabs": self.vocabs},
                {"enc.mean": self.mean, "enc.std": self.std, "enc.keep": self.keep.astype(np.uint8)})

    @classmethod
    def from_state(cls, header, arrays) -> "TabularEncoder":
        return cls(arrays["enc.mean"], arrays["enc.std"], arrays["enc.keep"].astype(bool),
                   [list(v) for v in header["vocabs"]])


# ---------------------------------------------------------------------------
# KNN
# ---------------------------------------------------------------------------

@dataclass
class KnnModel:
    encoder: TabularEncoder
    X: np.ndarray
    y: np.ndarray
    k: int = 5


def knn_fit(records: FlowTable, k: int = 5) -> KnnModel:
    if len(records) == 0:
        raise BaselineError("empty training set")
    if k < 1 or k > len(records):
        raise BaselineError(f"k must lie in [1, {len(records)}], got {k}")
    enc = TabularEncoder.fit(records)
    return KnnModel(enc, enc.transform(records), records.labels.astype(np.int64), int(k))


def knn_neighbors(model: KnnModel, Xq: np.ndarray) -> np.ndarray:
    return _kernels.knn(model.X, Xq, model.k)


def knn_score(model: KnnModel, records: FlowTable) -> np.ndarray:
    """Fraction of malicious labels among each query's k nearest neighbours."""
    nb = knn_neighbors(model, model.encoder.transform(records))
    return model.y[nb].mean(axis=1)


# ---------------------------------------------------------------------------
# GBDT
# ---------------------------------------------------------------------------

@dataclass
class GbdtConfig:
    n_trees: int = 100
    max_depth: int = 6
    eta: float = 0.3
    lam: float = 1.0
    min_child_weight: float = 1.0
    gamma: float = 0.0


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    default_left: np.ndarray
    value: np.ndarray

    def predict(self, X: np.ndarray) -> np.ndarray:
        return _kernels.tree_predict(X, self.feature, self.threshold, self.left, self.right,
                                     self.default_left, self.value)


@dataclass
class GbdtModel:
    encoder: TabularEncoder | None
    base_score: float
    config: GbdtConfig
    trees: list[Tree] = field(default_factory=list)

    def margin(self, X: np.ndarray) -> np.ndarray:
        out = np.full(X.shape[0], self.base_score)
        for t in self.trees:
            out += t.predict(X)
        return out


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def split_gain(g_left, h_left, g_right, h_right, lam: float, gamma: float = 0.0) -> float:
    """Objective reduction of splitting a node into the given children."""
    G, H = g_left + g_right, h_left + h_right
    return 0.5 * (g_left ** 2 / (h_left + lam) + g_right ** 2 / (h_right + lam)
                  - G ** 2 / (H + lam)) - gamma


def _build_tree(X, g, h, sorted_idx, cfg: GbdtConfig) -> Tree:
    n, n_feat = X.shape
    feature, threshold, left, right, default_left, value = [], [], [], [], [], []

    def new_node():
        for lst, v in ((feature, -1), (threshold, np.nan), (left, -1), (right, -1),
                       (default_left, True), (value, 0.0)):
            lst.append(v)
        return len(feature) - 1

    def leaf_value(mask):
        return -cfg.eta * g[mask].sum() / (h[mask].sum() + cfg.lam)

    stack = [(new_node(), np.ones(n, dtype=bool), 0)]
    while stack:
        node, mask, depth = stack.pop()
        best = (-np.inf, -1, np.nan)
        if depth < cfg.max_depth and mask.sum() >= 2:
            for f in range(n_feat):
                order = sorted_idx[f][mask[sorted_idx[f]]]
                gain, thr, _ = _kernels.split_scan(X[order, f], g[order], h[order],
                                                   cfg.lam, cfg.min_child_weight)
                if gain > best[0]:
                    best = (gain, f, thr)
        gain, f, thr = best
        if f < 0 or 0.5 * gain - cfg.gamma <= 0:
            value[node] = leaf_value(mask)
            continue
        go_left = mask & (X[:, f] < thr)
        go_right = mask & ~go_left
        feature[node] = f
        threshold[node] = thr
        default_left[node] = bool(go_left.sum() >= go_right.sum())
        lnode = new_node()
        rnode = new_node()
        left[node], right[node] = lnode, rnode
        stack.append((rnode, go_right, depth + 1))
        stack.append((lnode, go_left, depth + 1))
    return Tree(np.array(feature, dtype=np.int64), np.array(threshold, dtype=np.float64),
                np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                np.array(default_left, dtype=np.bool_), np.array(value, dtype=np.float64))


def gbdt_fit_arrays(X: np.ndarray, y: np.ndarray, config: GbdtConfig | None = None,
                    encoder: TabularEncoder | None = None, on_round=None) -> GbdtModel:
    cfg = config or GbdtConfig()
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    p = y.mean() if y.size else 0.5
    if y.size == 0 or p in (0.0, 1.0):
        warnings.warn("single-class training data: GBDT reduces to its base score", RuntimeWarning)
        base = 0.0 if y.size == 0 else (30.0 if p == 1.0 else -30.0)
        return GbdtModel(encoder, base, cfg)
    model = GbdtModel(encoder, float(np.log(p / (1 - p))), cfg)
    sorted_idx = [np.argsort(X[:, f], kind="stable") for f in range(X.shape[1])]
    margin = np.full(y.size, model.base_score)
    for r in range(cfg.n_trees):
        prob = sigmoid(margin)
        g = prob - y
        h = prob * (1.0 - prob)
        tree = _build_tree(X, g, h, sorted_idx, cfg)
        model.trees.append(tree)
        margin += tree.predict(X)
        if on_round is not None:
            on_round(r, margin)
    return model


def gbdt_fit(records: FlowTable, config: GbdtConfig | None = None) -> GbdtModel:
    enc = TabularEncoder.fit(records)
    return gbdt_fit_arrays(enc.transform(records, unknown=np.nan), records.labels, config, enc)


def gbdt_score(model: GbdtModel, records) -> np.ndarray:
    """Probability of the malicious class for a table or an encoded matrix."""
    if isinstance(records, FlowTable):
        X = model.encoder.transform(records, unknown=np.nan)
    else:
        X = np.asarray(records, dtype=np.float64)
    return sigmoid(model.margin(X))


def logistic_loss(margin, y) -> float:
    z = np.asarray(margin, dtype=np.float64)
    return float(np.mean(np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))))


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def save_gbdt(path, model: GbdtModel) -> None:
    eh, arrays = model.encoder.state() if model.encoder else ({}, {})
    cfg = model.config
    header = {"base_score": model.base_score, "encoder": eh if model.encoder else None,
              "config": {k: getattr(cfg, k) for k in cfg.__dataclass_fields__},
              "n_trees": len(model.trees)}
    for i, t in enumerate(model.trees):
        for a in ("feature", "threshold", "left", "right", "value"):
            arrays[f"tree.{i}.{a}"] = getattr(t, a)
        arrays[f"tree.{i}.default_left"] = t.default_left.astype(np.uint8)
    container.save(path, "gbdt", header, arrays)


def load_gbdt(path) -> GbdtModel:
    _, header, arrays = container.load(path, expect_tag="gbdt")
    enc = TabularEncoder.from_state(header["encoder"], arrays) if header["encoder"] else None
    trees = []
    for i in range(header["n_trees"]):
        trees.append(Tree(arrays[f"tree.{i}.feature"], arrays[f"tree.{i}.threshold"],
                          arrays[f"tree.{i}.left"], arrays[f"tree.{i}.right"],
                          arrays[f"tree.{i}.default_left"].astype(np.bool_),
                          arrays[f"tree.{i}.value"]))
    return GbdtModel(enc, header["base_score"], GbdtConfig(**header["config"]), trees)


def save_knn(path, model: KnnModel) -> None:
    eh, arrays = model.encoder.state()
    arrays.update({"knn.X": model.X, "knn.y": model.y})
    container.save(path, "knn", {"k": model.k, "encoder": eh}, arrays)


def load_knn(path) -> KnnModel:
    _, header, arrays = container.load(path, expect_tag="knn")
    return KnnModel(TabularEncoder.from_state(header["encoder"], arrays), arrays["knn.X"],
                    arrays["knn.y"], header["k"])
