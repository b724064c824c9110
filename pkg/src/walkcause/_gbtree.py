"""Histogram gradient boosting with symmetric (oblivious) trees on logistic loss.

Categorical columns are replaced by ordered target statistics before binning:
during training a row only sees targets of rows earlier in a seeded random
permutation; at prediction time the full-training statistics are used.
"""

from __future__ import annotations

import numpy as np
import pandas as pd

MAX_BINS = 255
L2_LEAF = 3.0
MAX_HALVINGS = 12


def sigmoid(f: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * f))


def logit(p):
    return np.log(p) - np.log1p(-p)


def cross_entropy(target: np.ndarray, f: np.ndarray) -> float:
    # -[y log s(f) + (1-y) log(1-s(f))] written stably in terms of f
    return float(np.mean(np.logaddexp(0.0, f) - target * f))


class OrderedTargetEncoder:
    def __init__(self, prior: float, smoothing: float = 1.0):
        self.prior = prior
        self.smoothing = smoothing
        self.stats: dict[str, tuple[float, int]] = {}

    def fit_transform(self, values: np.ndarray, target: np.ndarray,
                      rng: np.random.Generator) -> np.ndarray:
        perm = rng.permutation(len(values))
        frame = pd.DataFrame({"c": values[perm], "y": target[perm]})
        grouped = frame.groupby("c", sort=False)["y"]
        prev_sum = grouped.cumsum().to_numpy() - frame["y"].to_numpy()
        prev_cnt = grouped.cumcount().to_numpy()
        enc = np.empty(len(values))
        enc[perm] = (prev_sum + self.smoothing * self.prior) / (prev_cnt + self.smoothing)
        totals = frame.groupby("c", sort=True)["y"].agg(["sum", "count"])
        self.stats = {k: (float(s), int(c)) for k, s, c in
                      zip(totals.index, totals["sum"], totals["count"])}
        return enc

    def transform(self, values: np.ndarray) -> np.ndarray:
        a, prior = self.smoothing, self.prior
        lookup = {k: (s + a * prior) / (c + a) for k, (s, c) in self.stats.items()}
        return np.array([lookup.get(v, prior) for v in values], dtype=float)


def make_edges(col: np.ndarray, max_bins: int = MAX_BINS) -> np.ndarray:
    uniq = np.unique(col)
    if len(uniq) <= max_bins:
        return uniq[:-1]
    qs = np.quantile(col, np.arange(1, max_bins) / max_bins, method="lower")
    return np.unique(qs)


def apply_bins(col: np.ndarray, edges: np.ndarray) -> np.ndarray:
    # bin b holds values in (edges[b-1], edges[b]]
    return np.searchsorted(edges, col, side="left").astype(np.int32)


class SymmetricTree:
    __slots__ = ("features", "thresholds", "values")

    def __init__(self, features, thresholds, values):
        self.features = np.asarray(features, dtype=np.int32)
        self.thresholds = np.asarray(thresholds, dtype=np.int32)
        self.values = np.asarray(values, dtype=float)

    def leaf_index(self, binned: np.ndarray) -> np.ndarray:
        leaf = np.zeros(len(binned), dtype=np.int64)
        for f, t in zip(self.features, self.thresholds):
            leaf = 2 * leaf + (binned[:, f] > t)
        return leaf

    def predict(self, binned: np.ndarray) -> np.ndarray:
        return self.values[self.leaf_index(binned)]


def _grow_tree(binned, grad, hess, n_bins, max_depth, min_child, l2):
    n, F = binned.shape
    B = int(n_bins.max())
    leaf = np.zeros(n, dtype=np.int64)
    feats, thrs = [], []
    for depth in range(max_depth):
        nodes = 2 ** depth
        offsets = (np.arange(F, dtype=np.int64) * nodes * B)[None, :]
        flat = (offsets + leaf[:, None] * B + binned).ravel()
        size = F * nodes * B
        G = np.bincount(flat, weights=np.repeat(grad, F), minlength=size).reshape(F, nodes, B)
        Hs = np.bincount(flat, weights=np.repeat(hess, F), minlength=size).reshape(F, nodes, B)
        C = np.bincount(flat, minlength=size).reshape(F, nodes, B)
        GL, HL, CL = G.cumsum(2), Hs.cumsum(2), C.cumsum(2)
        Gt, Ht, Ct = GL[:, :, -1:], HL[:, :, -1:], CL[:, :, -1:]
        GR, HR, CR = Gt - GL, Ht - HL, Ct - CL
        gain = GL ** 2 / (HL + l2) + GR ** 2 / (HR + l2) - Gt ** 2 / (Ht + l2)
        valid = (CL >= min_child) & (CR >= min_child)
        gain = np.where(valid, gain, 0.0).sum(axis=1)  # F x B, summed over nodes
        # thresholds beyond a feature's last edge are no-ops
        gain[np.arange(B)[None, :] >= (n_bins[:, None] - 1)] = -np.inf
        best = int(np.argmax(gain))
        f, t = divmod(best, B)
        if not np.isfinite(gain[f, t]) or gain[f, t] <= 1e-12:
            break
        feats.append(f)
        thrs.append(t)
        leaf = 2 * leaf + (binned[:, f] > t)
    n_leaves = 2 ** len(feats)
    Gl = np.bincount(leaf, weights=grad, minlength=n_leaves)
    Hl = np.bincount(leaf, weights=hess, minlength=n_leaves)
    Cl = np.bincount(leaf, minlength=n_leaves)
    values = np.where(Cl >= min_child, -Gl / (Hl + l2), 0.0)
    return feats, thrs, values, leaf


class GBTreeCore:
    """Boosted symmetric trees; the raw score ``f`` feeds a sigmoid."""

    def __init__(self, tree_count, max_depth, learning_rate, min_child_samples,
                 cat_smoothing, seed, l2_leaf_reg=L2_LEAF, subsample=1.0, max_bins=MAX_BINS):
        self.tree_count = tree_count
        self.max_depth = max_depth
        self.learning_rate = learning_rate
        self.min_child_samples = min_child_samples
        self.cat_smoothing = cat_smoothing
        self.seed = seed
        self.l2_leaf_reg = l2_leaf_reg
        self.subsample = subsample
        self.max_bins = max_bins
        self.trees: list[SymmetricTree] = []
        self.edges: list[np.ndarray] = []
        self.encoders: dict[int, OrderedTargetEncoder] = {}
        self.base_score = 0.0
        self.loss_history: list[float] = []

    def _numeric_matrix(self, frame: pd.DataFrame, categorical: set[str],
                        target=None, rng=None) -> np.ndarray:
        cols = []
        for j, name in enumerate(frame.columns):
            values = frame[name].to_numpy()
            if name in categorical:
                if target is not None:
                    enc = OrderedTargetEncoder(float(np.mean(target)), self.cat_smoothing)
                    cols.append(enc.fit_transform(values.astype(str), target, rng))
                    self.encoders[j] = enc
                else:
                    cols.append(self.encoders[j].transform(values.astype(str)))
            else:
                cols.append(values.astype(float))
        return np.column_stack(cols) if cols else np.zeros((len(frame), 0))

    def _bin(self, X: np.ndarray) -> np.ndarray:
        if X.shape[1] == 0:
            return np.zeros((len(X), 1), dtype=np.int32)
        return np.column_stack([apply_bins(X[:, j], e) for j, e in enumerate(self.edges)])

    def fit(self, frame: pd.DataFrame, target: np.ndarray, categorical: set[str]):
        rng = np.random.default_rng(self.seed)
        X = self._numeric_matrix(frame, categorical, target=target, rng=rng)
        self.edges = [make_edges(X[:, j], self.max_bins) for j in range(X.shape[1])]
        binned = self._bin(X)
        n_bins = np.array([len(e) + 1 for e in self.edges] or [1], dtype=np.int64)
        mean = float(np.clip(np.mean(target), 1e-6, 1 - 1e-6))
        self.base_score = float(logit(mean))
        f = np.full(len(target), self.base_score)
        loss = cross_entropy(target, f)
        self.loss_history = [loss]
        for _ in range(self.tree_count):
            p = sigmoid(f)
            grad, hess = p - target, np.maximum(p * (1 - p), 1e-12)
            if self.subsample < 1.0:
                rows = rng.random(len(target)) < self.subsample
                feats, thrs, values, _ = _grow_tree(
                    binned[rows], grad[rows], hess[rows], n_bins, self.max_depth,
                    self.min_child_samples, self.l2_leaf_reg)
                leaf = SymmetricTree(feats, thrs, values).leaf_index(binned)
            else:
                feats, thrs, values, leaf = _grow_tree(
                    binned, grad, hess, n_bins, self.max_depth, self.min_child_samples,
                    self.l2_leaf_reg)
            step = self.learning_rate * values
            for _ in range(MAX_HALVINGS):
                trial = f + step[leaf]
                new_loss = cross_entropy(target, trial)
                if new_loss <= loss:
                    break
                step = step / 2
            else:
                step = np.zeros_like(step)
                trial, new_loss = f, loss
            self.trees.append(SymmetricTree(feats, thrs, step))
            f, loss = trial, new_loss
            self.loss_history.append(loss)
        return self

    def decision_function(self, frame: pd.DataFrame, categorical: set[str]) -> np.ndarray:
        binned = self._bin(self._numeric_matrix(frame, categorical))
        f = np.full(len(frame), self.base_score)
        for tree in self.trees:
            f += tree.predict(binned)
        return f
