"""SMAC-style optimization with a random-forest surrogate."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..searchspace import decode_unit, encode_unit
from .base import Optimizer
from .gp import XI, expected_improvement, standardize

N_TREES = 10
MIN_LEAF = 3
POOL_SIZE = 1000
N_NEIGHBORS = 10
NEIGHBOR_STD = 0.1
N_STARTUP = 5


class RegressionTree:
    """CART regression tree with random feature subsets and midpoint splits."""

    def __init__(self, rng: np.random.Generator, max_features: int, min_leaf: int = MIN_LEAF):
        self.rng = rng
        self.max_features = max_features
        self.min_leaf = min_leaf
        # flat node storage: feature (-1 = leaf), threshold, left, right, value
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []

    def fit(self, x: np.ndarray, y: np.ndarray) -> "RegressionTree":
        self._grow(x, y)
        return self

    def _new_node(self, value: float) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        return len(self.value) - 1

    def _grow(self, x: np.ndarray, y: np.ndarray) -> int:
        node = self._new_node(float(y.mean()))
        n, d = x.shape
        if n < 2 * self.min_leaf or np.all(y == y[0]):
            return node
        dims = self.rng.choice(d, size=min(self.max_features, d), replace=False)
        best = None
        for f in dims:
            order = np.argsort(x[:, f], kind="stable")
            xs, ys = x[order, f], y[order]
            csum = np.cumsum(ys)
            csq = np.cumsum(ys * ys)
            total, total_sq = csum[-1], csq[-1]
            for i in range(self.min_leaf, n - self.min_leaf + 1):
                if xs[i - 1] == xs[i]:
                    continue
                nl, nr = i, n - i
                sl, sr = csum[i - 1], total - csum[i - 1]
                sse = (csq[i - 1] - sl * sl / nl) + (total_sq - csq[i - 1] - sr * sr / nr)
                if best is None or sse < best[0] - 1e-12:
                    best = (sse, int(f), 0.5 * (xs[i - 1] + xs[i]))
        if best is None:
            return node
        _, f, thr = best
        mask = x[:, f] <= thr
        self.feature[node] = f
        self.threshold[node] = thr
        left = self._grow(x[mask], y[mask])
        right = self._grow(x[~mask], y[~mask])
        self.left[node] = left
        self.right[node] = right
        return node

    def predict(self, xq: np.ndarray) -> np.ndarray:
        feature = np.asarray(self.feature)
        threshold = np.asarray(self.threshold)
        left, right = np.asarray(self.left), np.asarray(self.right)
        node = np.zeros(xq.shape[0], dtype=int)
        active = feature[node] >= 0
        while active.any():
            rows = np.flatnonzero(active)
            f = feature[node[rows]]
            go_left = xq[rows, f] <= threshold[node[rows]]
            node[rows] = np.where(go_left, left[node[rows]], right[node[rows]])
            active = feature[node] >= 0
        return np.asarray(self.value)[node]


class RandomForest:
    def __init__(self, rng: np.random.Generator, n_trees: int = N_TREES, min_leaf: int = MIN_LEAF):
        self.rng = rng
        self.n_trees = n_trees
        self.min_leaf = min_leaf
        self.trees: list[RegressionTree] = []
        self.tree_data: list[tuple[np.ndarray, np.ndarray]] = []

    def fit(self, x: np.ndarray, y: np.ndarray) -> "RandomForest":
        n, d = x.shape
        max_features = math.ceil(d / 2)
        self.trees, self.tree_data = [], []
        for _ in range(self.n_trees):
            idx = self.rng.integers(0, n, size=n)
            tree = RegressionTree(self.rng, max_features, self.min_leaf).fit(x[idx], y[idx])
            self.trees.append(tree)
            self.tree_data.append((x[idx], y[idx]))
        return self

    def predict(self, xq: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Mean of tree predictions and their across-tree variance."""
        preds = np.array([t.predict(xq) for t in self.trees])
        return preds.mean(axis=0), preds.var(axis=0)


@dataclass
class SMAC(Optimizer):
    algorithm = "smac"
    n_startup: int = N_STARTUP
    pool_size: int = POOL_SIZE
    n_neighbors: int = N_NEIGHBORS
    xi: float = XI

    def suggest(self) -> tuple[dict, int]:
        data = self.model_data()
        self.n_suggested += 1
        if len(data) < self.n_startup:
            return self._random(), self.b_max
        x = np.array([encode_unit(self.space, t.config) for t in data])
        y = standardize([t.objective for t in data])
        forest = RandomForest(self.rng).fit(x, y)
        pool = self.candidate_pool(data)
        u = np.array([encode_unit(self.space, c) for c in pool])
        mean, var = forest.predict(u)
        ei = expected_improvement(mean, np.sqrt(var), float(y.min()), self.xi)
        return pool[int(np.argmax(ei))], self.b_max

    def candidate_pool(self, data) -> list[dict]:
        """Random configurations first, then Gaussian neighbours of the best observation."""
        pool = [self._random() for _ in range(self.pool_size)]
        best = min(data, key=lambda t: (t.objective, t.trial_id))
        center = encode_unit(self.space, best.config)
        for _ in range(self.n_neighbors):
            u = np.clip(center + self.rng.normal(0.0, NEIGHBOR_STD, center.shape), 0.0, 1.0)
            pool.append(decode_unit(self.space, u))
        return pool
