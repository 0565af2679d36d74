"""A small random-forest classifier with a portable JSON model format.

Trees use axis-aligned `x <= threshold` splits chosen by Gini impurity over
ceil(sqrt(n_features)) randomly drawn candidate attributes, grown on
bootstrap samples. Each tree casts one vote; confidence is the vote share.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Any, Optional, Sequence

import numpy as np

FORMAT_NAME = "cglens-forest"
FORMAT_VERSION = 1


class TrainingError(ValueError):
    pass


class ArityError(ValueError):
    pass


@dataclass(frozen=True)
class Tree:
    feature: np.ndarray  # -1 at leaves
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    label: np.ndarray  # class index voted by each node (used at leaves)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf class index for each row of X."""
        node = np.zeros(len(X), np.int64)
        rows = np.arange(len(X))
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                break
            go_left = X[rows, np.where(inner, f, 0)] <= self.threshold[node]
            node = np.where(inner, np.where(go_left, self.left[node], self.right[node]), node)
        return self.label[node]

    def to_dict(self) -> dict:
        return {"feature": self.feature.tolist(), "threshold": self.threshold.tolist(),
                "left": self.left.tolist(), "right": self.right.tolist(),
                "label": self.label.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(np.array(d["feature"], np.int64), np.array(d["threshold"], float),
                   np.array(d["left"], np.int64), np.array(d["right"], np.int64),
                   np.array(d["label"], np.int64))


@dataclass(frozen=True)
class Prediction:
    label: Any
    confidence: float
    votes: dict


@dataclass(frozen=True)
class Ensemble:
    trees: tuple[Tree, ...]
    classes: tuple
    n_features: int
    max_depth: int
    rng_seed: int
    feature_names: Optional[tuple[str, ...]] = None
    meta: Optional[dict] = None

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise ArityError(f"model expects {self.n_features} attributes, got {X.shape[1]}")
        return X

    def vote_shares(self, X) -> np.ndarray:
        """(n_rows, n_classes) share of trees voting for each class."""
        X = self._check(X)
        counts = np.zeros((len(X), len(self.classes)))
        rows = np.arange(len(X))
        for tree in self.trees:
            counts[rows, tree.apply(X)] += 1
        return counts / len(self.trees)

    def predict_many(self, X) -> list[Prediction]:
        shares = self.vote_shares(X)
        best = shares.argmax(axis=1)  # first maximum wins: class-order tie-break
        return [Prediction(self.classes[b], float(s[b]), dict(zip(self.classes, s.tolist())))
                for b, s in zip(best, shares)]

    def predict_labels(self, X) -> list:
        shares = self.vote_shares(X)
        return [self.classes[b] for b in shares.argmax(axis=1)]


def predict(model: Ensemble, features) -> Prediction:
    return model.predict_many(np.asarray(features, float).reshape(1, -1))[0]


def _best_split(x: np.ndarray, y: np.ndarray, n_classes: int):
    """Lowest weighted-Gini split of one attribute; None when x is constant."""
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    cut = np.flatnonzero(xs[1:] != xs[:-1])  # split between cut and cut + 1
    if len(cut) == 0:
        return None
    onehot = np.zeros((len(ys), n_classes))
    onehot[np.arange(len(ys)), ys] = 1.0
    left = np.cumsum(onehot, axis=0)[cut]
    total = onehot.sum(axis=0)
    right = total - left
    nl = cut + 1.0
    nr = len(ys) - nl
    score = (nl - (left ** 2).sum(axis=1) / nl) + (nr - (right ** 2).sum(axis=1) / nr)
    k = int(np.argmin(score))
    lo, hi = xs[cut[k]], xs[cut[k] + 1]
    thr = lo + (hi - lo) / 2
    if not lo <= thr < hi:
        thr = lo
    return float(score[k]), float(thr)


def _grow_tree(X: np.ndarray, y: np.ndarray, n_classes: int, max_depth: int, max_features: int,
               rng: np.random.Generator) -> Tree:
    feature, threshold, left, right, label = [], [], [], [], []
    n_attr = X.shape[1]

    def new_node(idx):
        counts = np.bincount(y[idx], minlength=n_classes)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        label.append(int(np.argmax(counts)))
        return len(feature) - 1, counts

    root, root_counts = new_node(np.arange(len(y)))
    stack = [(root, np.arange(len(y)), 0, root_counts)]
    while stack:
        node, idx, depth, counts = stack.pop()
        if depth >= max_depth or len(idx) < 2 or np.count_nonzero(counts) <= 1:
            continue
        best = None
        examined = 0
        for f in rng.permutation(n_attr):
            found = _best_split(X[idx, f], y[idx], n_classes)
            if found is None:
                continue
            examined += 1
            if best is None or found[0] < best[0]:
                best = (found[0], int(f), found[1])
            if examined >= max_features:
                break
        if best is None:
            continue
        _, f, thr = best
        go_left = X[idx, f] <= thr
        li, ri = idx[go_left], idx[~go_left]
        lnode, lcounts = new_node(li)
        rnode, rcounts = new_node(ri)
        feature[node], threshold[node], left[node], right[node] = f, thr, lnode, rnode
        stack.append((rnode, ri, depth + 1, rcounts))
        stack.append((lnode, li, depth + 1, lcounts))
    return Tree(np.array(feature, np.int64), np.array(threshold, float), np.array(left, np.int64),
                np.array(right, np.int64), np.array(label, np.int64))


def train(X, y: Sequence, n_trees: int = 100, max_depth: int = 10, rng_seed: int = 0,
          classes: Optional[Sequence] = None, feature_names: Optional[Sequence[str]] = None,
          meta: Optional[dict] = None) -> Ensemble:
    """Fit a bootstrap forest. Identical inputs and seed give an identical model."""
    X = np.asarray(X, float)
    if X.ndim != 2 or len(X) != len(y):
        raise TrainingError("X must be 2-D with one row per label")
    if not np.isfinite(X).all():
        raise TrainingError("feature matrix contains NaN or infinite values")
    if classes is None:
        classes = sorted(set(y), key=lambda c: (str(type(c)), c))
    classes = tuple(classes)
    index = {c: i for i, c in enumerate(classes)}
    present = set(y)
    if len(present) < 2:
        raise TrainingError("training needs at least two distinct classes")
    if not present <= set(classes):
        raise TrainingError(f"labels outside the class list: {present - set(classes)}")
    if n_trees < 1 or max_depth < 1:
        raise TrainingError("n_trees and max_depth must be positive")
    yi = np.array([index[c] for c in y], np.int64)
    max_features = max(1, math.ceil(math.sqrt(X.shape[1])))
    seeds = np.random.SeedSequence(rng_seed).spawn(n_trees)
    trees = []
    for s in seeds:
        rng = np.random.default_rng(s)
        boot = rng.integers(0, len(yi), len(yi))
        trees.append(_grow_tree(X[boot], yi[boot], len(classes), max_depth, max_features, rng))
    return Ensemble(tuple(trees), classes, X.shape[1], max_depth, rng_seed,
                    tuple(feature_names) if feature_names is not None else None, meta)


def accuracy(model: Ensemble, X, y: Sequence) -> float:
    pred = model.predict_labels(X)
    return float(np.mean([p == t for p, t in zip(pred, y)]))


def permutation_importance(model: Ensemble, X, y: Sequence, rng_seed: int = 0,
                           n_repeats: int = 5) -> np.ndarray:
    """Accuracy drop when each attribute column is shuffled (mean over repeats)."""
    X = np.asarray(X, float)
    if len(X) == 0:
        raise ValueError("permutation importance needs a non-empty dataset")
    y = list(y)
    base = accuracy(model, X, y)
    rng = np.random.default_rng(rng_seed)
    out = np.zeros(X.shape[1])
    for j in range(X.shape[1]):
        scores = []
        for _ in range(n_repeats):
            Xp = X.copy()
            Xp[:, j] = X[rng.permutation(len(X)), j]
            scores.append(accuracy(model, Xp, y))
        out[j] = base - float(np.mean(scores))
    return out


def _class_to_json(c):
    return c.value if hasattr(c, "value") else c


def save_model(model: Ensemble, path) -> None:
    doc = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "classes": [_class_to_json(c) for c in model.classes],
        "n_features": model.n_features,
        "n_trees": model.n_trees,
        "max_depth": model.max_depth,
        "rng_seed": model.rng_seed,
        "feature_names": list(model.feature_names) if model.feature_names else None,
        "meta": model.meta or {},
        "trees": [t.to_dict() for t in model.trees],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, separators=(",", ":"))


def load_model(path, class_type=None) -> Ensemble:
    """Load a model file; unknown top-level fields are ignored for forward compatibility."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != FORMAT_NAME:
        raise ValueError(f"{path}: not a {FORMAT_NAME} model")
    if int(doc.get("version", 0)) > FORMAT_VERSION:
        raise ValueError(f"{path}: model version {doc['version']} newer than supported {FORMAT_VERSION}")
    classes = tuple(class_type(c) if class_type else c for c in doc["classes"])
    trees = tuple(Tree.from_dict(t) for t in doc["trees"])
    names = doc.get("feature_names")
    return Ensemble(trees, classes, int(doc["n_features"]), int(doc["max_depth"]),
                    int(doc["rng_seed"]), tuple(names) if names else None, doc.get("meta") or {})
