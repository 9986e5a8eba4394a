"""Non-sequential baseline: per-window summary statistics and a random forest of CART trees."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._backend import kernels
from .core import SIGNALS, AugmentedFrame
from .errors import SingleClassTrainingSet

STATS = ("min", "max", "mean", "std", "median")
STAT_COLUMNS = tuple(f"{sig}_{stat}" for stat in STATS for sig in SIGNALS)


def stat_feature_matrix(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """(N, 20) statistics over the observed samples of each window.

    ``values``/``mask`` are (N, L, 4) in per-frame signal order. Columns are
    stat-major: min, max, mean, std (population), median (lower middle), each
    over gaze_x, gaze_y, pupil, velocity. A signal with no observed sample in
    a window contributes zeros.
    """
    values = np.asarray(values, dtype=np.float64)
    obs = np.asarray(mask).astype(bool)
    count = obs.sum(axis=1)  # (N, 4)
    safe = np.maximum(count, 1)
    vmin = np.where(obs, values, np.inf).min(axis=1)
    vmax = np.where(obs, values, -np.inf).max(axis=1)
    total = np.where(obs, values, 0.0).sum(axis=1)
    mean = total / safe
    dev = np.where(obs, values - mean[:, None, :], 0.0)
    std = np.sqrt((dev * dev).sum(axis=1) / safe)
    ordered = np.sort(np.where(obs, values, np.inf), axis=1)
    mid = np.maximum((count - 1) // 2, 0)
    median = np.take_along_axis(ordered, mid[:, None, :], axis=1)[:, 0, :]
    stats = np.stack([vmin, vmax, mean, std, median], axis=1)  # (N, 5, 4)
    stats = np.where((count > 0)[:, None, :], stats, 0.0)
    return stats.reshape(len(values), -1)


def stat_features(window) -> np.ndarray:
    """20-d statistics for one window: a list of :class:`AugmentedFrame` or ``(values, mask)``."""
    if isinstance(window, tuple) and len(window) == 2:
        values, mask = (np.asarray(a) for a in window)
    else:
        frames: list[AugmentedFrame] = list(window)
        if not frames:
            raise ValueError("empty window")
        values = np.array([f.values for f in frames], dtype=np.float64)
        mask = np.array([f.mask for f in frames])
    return stat_feature_matrix(values[None], mask[None])[0]


def gini(counts) -> float:
    c = np.asarray(counts, dtype=np.float64)
    n = c.sum()
    return 0.0 if n == 0 else float(1.0 - np.sum((c / n) ** 2))


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 200
    max_depth: int | None = None
    min_samples_leaf: int = 1
    features_per_split: int | None = None  # default ceil(sqrt(n_features))
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be at least 1")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be at least 1")


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    label: np.ndarray  # 0-based majority class per node

    def apply(self, x: np.ndarray) -> np.ndarray:
        node = np.zeros(len(x), dtype=np.int64)
        active = self.left[node] >= 0
        while active.any():
            idx = np.nonzero(active)[0]
            nd = node[idx]
            go_left = x[idx, self.feature[nd]] <= self.threshold[nd]
            node[idx] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.left[node] >= 0
        return node

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.label[self.apply(x)]


def build_tree(
    x: np.ndarray,
    y: np.ndarray,
    n_classes: int,
    rng: np.random.Generator,
    max_features: int,
    min_samples_leaf: int = 1,
    max_depth: int | None = None,
) -> Tree:
    """Grow a CART tree on (x, y) with Gini splits; ``y`` is 0-based."""
    feature, threshold, left, right, label = [], [], [], [], []

    def new_node(idx):
        counts = np.bincount(y[idx], minlength=n_classes)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        label.append(int(np.argmax(counts)))  # ties -> lowest class
        return len(label) - 1, counts

    root, root_counts = new_node(np.arange(len(y)))
    stack = [(root, np.arange(len(y)), root_counts, 0)]
    n_features = x.shape[1]
    while stack:
        node, idx, counts, depth = stack.pop()
        if np.count_nonzero(counts) <= 1 or len(idx) < 2 * min_samples_leaf:
            continue
        if max_depth is not None and depth >= max_depth:
            continue
        best = (math.inf, -1, -1, None)
        tried = 0
        for f in rng.permutation(n_features):
            if tried >= max_features:
                break
            col = x[idx, f]
            order = np.argsort(col, kind="stable")
            xs = np.ascontiguousarray(col[order])
            if xs[0] == xs[-1]:
                continue  # constant features do not count toward max_features
            tried += 1
            score, pos = kernels.best_gini_split(xs, np.ascontiguousarray(y[idx][order], dtype=np.int64), n_classes, min_samples_leaf)
            if pos > 0 and score < best[0]:
                best = (score, f, pos, (xs, order))
        if best[1] < 0:
            continue
        _, f, pos, (xs, order) = best
        thr = 0.5 * (xs[pos - 1] + xs[pos])
        if thr >= xs[pos]:
            thr = xs[pos - 1]
        left_idx, right_idx = idx[order[:pos]], idx[order[pos:]]
        feature[node] = int(f)
        threshold[node] = float(thr)
        l_node, l_counts = new_node(left_idx)
        r_node, r_counts = new_node(right_idx)
        left[node], right[node] = l_node, r_node
        stack.append((r_node, right_idx, r_counts, depth + 1))
        stack.append((l_node, left_idx, l_counts, depth + 1))
    return Tree(
        np.array(feature, dtype=np.int64),
        np.array(threshold),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(label, dtype=np.int64),
    )


@dataclass
class Forest:
    trees: list[Tree]
    n_classes: int
    in_bag: list[np.ndarray] = field(default_factory=list)

    def votes(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        v = np.zeros((len(x), self.n_classes), dtype=np.int64)
        for t in self.trees:
            np.add.at(v, (np.arange(len(x)), t.predict(x)), 1)
        return v


def fit_forest(features: np.ndarray, labels, config: ForestConfig = ForestConfig(), n_classes: int = 3) -> Forest:
    """Bagged CART trees; ``labels`` are classes 1..n_classes."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64) - 1
    if len(np.unique(y)) < 2:
        raise SingleClassTrainingSet("the random forest needs at least two classes")
    mtry = config.features_per_split or math.ceil(math.sqrt(x.shape[1]))
    seeds = np.random.SeedSequence(config.seed).spawn(config.n_trees)
    trees, in_bag = [], []
    n = len(y)
    for ss in seeds:
        rng = np.random.default_rng(ss)
        idx = rng.integers(0, n, n) if config.bootstrap else np.arange(n)
        trees.append(build_tree(x[idx], y[idx], n_classes, rng, mtry, config.min_samples_leaf, config.max_depth))
        in_bag.append(np.bincount(idx, minlength=n) > 0)
    return Forest(trees, n_classes, in_bag)


def predict_forest(forest: Forest, features) -> tuple[np.ndarray, np.ndarray]:
    """Majority vote (ties -> lower class) and vote fractions; classes are 1-based.

    Accepts one feature vector or a matrix of them.
    """
    x = np.asarray(features, dtype=np.float64)
    single = x.ndim == 1
    votes = forest.votes(x)
    probs = votes / len(forest.trees)
    cls = votes.argmax(axis=1) + 1
    if single:
        return int(cls[0]), probs[0]
    return cls, probs


def oob_accuracy(forest: Forest, features, labels) -> float:
    """Accuracy of out-of-bag votes over samples left out by at least one tree."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels) - 1
    votes = np.zeros((len(x), forest.n_classes), dtype=np.int64)
    for t, bag in zip(forest.trees, forest.in_bag):
        out = np.nonzero(~bag)[0]
        if out.size:
            np.add.at(votes, (out, t.predict(x[out])), 1)
    has = votes.sum(axis=1) > 0
    return float(np.mean(votes[has].argmax(axis=1) == y[has]))
