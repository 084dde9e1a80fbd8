"""Feature importance by mean decrease in impurity (regression forest) and by
clipped gradient descent on a linear predictor."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

DELTA = 0.001


@dataclass(frozen=True)
class ImportanceVector:
    method: str
    scores: np.ndarray
    delta: float = DELTA

    def __post_init__(self):
        if self.method not in ("mdi", "gd"):
            raise ValueError(f"unknown importance method {self.method!r}")
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("importance scores must be finite")

    def to_csv(self, names: Sequence[str]) -> str:
        if len(names) != len(self.scores):
            raise ValueError("one name per score required")
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["feature", "score"])
        for name, s in zip(names, self.scores):
            w.writerow([name, repr(float(s))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, method: str) -> tuple[list[str], "ImportanceVector"]:
        rows = list(csv.DictReader(io.StringIO(text)))
        names = [r["feature"] for r in rows]
        return names, cls(method, np.array([float(r["score"]) for r in rows]))


def apply_importance(X: np.ndarray, fi: ImportanceVector | np.ndarray) -> np.ndarray:
    """Scale column ``i`` of ``X`` by ``scores[i]``."""
    scores = fi.scores if isinstance(fi, ImportanceVector) else np.asarray(fi, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != scores.shape[0]:
        raise ValueError(f"dimension mismatch: {X.shape[-1]} columns vs {scores.shape[0]} scores")
    return X * scores


# -- impurity ----------------------------------------------------------------

def variance_impurity(values) -> float:
    """Population variance of the targets at a node."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("impurity of an empty node is undefined")
    return float(np.mean((v - v.mean()) ** 2))


def impurity_reduction(parent, left, right) -> float:
    parent = np.asarray(parent, dtype=float)
    left = np.asarray(left, dtype=float)
    right = np.asarray(right, dtype=float)
    if left.size + right.size != parent.size or not np.array_equal(
            np.sort(parent), np.sort(np.concatenate([left, right]))):
        raise ValueError("left and right must partition the parent")
    n = parent.size
    return (variance_impurity(parent)
            - left.size / n * variance_impurity(left)
            - right.size / n * variance_impurity(right))


# -- regression forest --------------------------------------------------------

@dataclass
class Tree:
    """Flat node arrays; leaves have ``feature == -1``. ``gain`` holds the
    impurity reduction of the split made at each internal node."""

    feature: list[int] = field(default_factory=list)
    threshold: list[float] = field(default_factory=list)
    impurity: list[float] = field(default_factory=list)
    n_samples: list[int] = field(default_factory=list)
    value: list[float] = field(default_factory=list)
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)
    gain: list[float] = field(default_factory=list)

    def add_node(self, impurity: float, n: int, value: float) -> int:
        self.feature.append(-1)
        self.threshold.append(math.nan)
        self.impurity.append(impurity)
        self.n_samples.append(n)
        self.value.append(value)
        self.left.append(-1)
        self.right.append(-1)
        self.gain.append(0.0)
        return len(self.feature) - 1

    @property
    def node_count(self) -> int:
        return len(self.feature)

    def splits(self):
        """Yield ``(feature, gain)`` for every internal node."""
        for f, g in zip(self.feature, self.gain):
            if f >= 0:
                yield f, g

    def predict_one(self, x: np.ndarray) -> float:
        node = 0
        while self.feature[node] >= 0:
            node = self.left[node] if x[self.feature[node]] <= self.threshold[node] else self.right[node]
        return self.value[node]


def _tie_tol(gain: np.ndarray) -> np.ndarray:
    # equal partitions reached through different cumsums differ by a few ulps
    return 1e-12 * np.maximum(1.0, np.abs(gain))


def _level_splits(x: np.ndarray, y: np.ndarray, grp: np.ndarray, starts: np.ndarray, counts: np.ndarray):
    """Best cut of one feature for every node of a level at once.

    ``grp`` holds contiguous, sorted node slots whose sizes are ``counts``
    and which begin at ``starts``; ``y`` is centred per node. Returns
    per-slot ``(gain, threshold)`` with ``-inf`` gain where the feature is
    constant. Thresholds are midpoints between consecutive distinct values;
    the lowest one wins ties.
    """
    order = np.lexsort((x, grp))
    xs, ys = x[order], y[order]
    cs = np.cumsum(ys)
    cq = np.cumsum(ys * ys)
    base_s = np.where(starts > 0, cs[starts - 1], 0.0)
    base_q = np.where(starts > 0, cq[starts - 1], 0.0)
    # cut i lies between xs[i] and xs[i+1] of the same node
    i = np.flatnonzero((grp[1:] == grp[:-1]) & (xs[1:] > xs[:-1]))
    gain = np.full(counts.size, -np.inf)
    thr = np.full(counts.size, np.nan)
    if i.size == 0:
        return gain, thr
    g = grp[i]
    n = counts[g].astype(float)
    n_l = (i - starts[g] + 1).astype(float)
    n_r = n - n_l
    s_l = cs[i] - base_s[g]
    q_l = cq[i] - base_q[g]
    last = starts[g] + counts[g] - 1
    s_t = cs[last] - base_s[g]
    q_t = cq[last] - base_q[g]
    s_r, q_r = s_t - s_l, q_t - q_l
    parent = q_t / n - (s_t / n) ** 2
    gains = parent - (n_l / n) * (q_l / n_l - (s_l / n_l) ** 2) - (n_r / n) * (q_r / n_r - (s_r / n_r) ** 2)
    np.maximum.at(gain, g, gains)
    # first cut within rounding of the node maximum; hits are sorted by slot
    hit = np.flatnonzero(gains >= gain[g] - _tie_tol(gain[g]))
    gh = g[hit]
    first = hit[np.concatenate([[True], gh[1:] != gh[:-1]])]
    thr[g[first]] = (xs[i[first]] + xs[i[first] + 1]) / 2.0
    return gain, thr


def grow_forest(X: np.ndarray, y: np.ndarray, rows: Sequence[np.ndarray], rngs: Sequence[np.random.Generator],
                max_features: int, max_depth: int = 8, min_samples_split: int = 2) -> list[Tree]:
    """Grow one variance-impurity tree per ``rows`` sample, breadth first.

    All trees advance a level together, so every pass handles the slots of
    every (tree, open node) pair at once. Tree ``b`` draws its candidate
    features from ``rngs[b]`` only. Each splittable node draws
    ``max_features`` candidates; the largest positive gain wins, the lowest
    feature index on ties.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n_trees, n_features = len(rows), X.shape[1]
    samples = np.concatenate(rows)
    grp = np.repeat(np.arange(n_trees), [len(r) for r in rows])
    slot_tree = np.arange(n_trees)
    offset = np.zeros(n_trees, dtype=int)   # nodes already assigned per tree
    levels = []
    depth = 0
    while slot_tree.size:
        m = slot_tree.size
        per_tree = np.bincount(slot_tree, minlength=n_trees)
        tree_first = np.concatenate([[0], np.cumsum(per_tree)[:-1]])
        local_id = offset[slot_tree] + np.arange(m) - tree_first[slot_tree]
        offset = offset + per_tree

        counts = np.bincount(grp, minlength=m)
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        ys = y[samples]
        means = np.bincount(grp, ys, minlength=m) / counts
        pure = np.maximum.reduceat(ys, starts) == np.minimum.reduceat(ys, starts)
        centred = ys - means[grp]
        imp = np.where(pure, 0.0, np.bincount(grp, centred * centred, minlength=m) / counts)
        level = dict(tree=slot_tree, impurity=imp, n_samples=counts, value=means, feature=np.full(m, -1),
                     threshold=np.full(m, np.nan), gain=np.zeros(m), left=np.full(m, -1), right=np.full(m, -1))
        levels.append(level)

        split = ~pure & (counts >= min_samples_split) & (depth < max_depth)
        if not split.any():
            break
        cand = np.zeros((m, n_features), dtype=bool)
        for b in np.unique(slot_tree[split]):
            mine = np.flatnonzero(split & (slot_tree == b))
            picks = np.argsort(rngs[b].random((mine.size, n_features)), axis=1)[:, :max_features]
            cand[np.repeat(mine, picks.shape[1]), picks.ravel()] = True

        active = split[grp]
        sub_grp, sub_y, sub_rows = grp[active], centred[active], samples[active]
        sub_counts = np.where(split, counts, 0)
        sub_starts = np.concatenate([[0], np.cumsum(sub_counts)[:-1]])
        gains = np.full((m, n_features), -np.inf)
        thrs = np.full((m, n_features), np.nan)
        for f in np.flatnonzero(cand.any(axis=0)):
            gains[:, f], thrs[:, f] = _level_splits(X[sub_rows, f], sub_y, sub_grp, sub_starts, sub_counts)
        gains[~cand] = -np.inf
        top = gains.max(axis=1)
        with np.errstate(invalid="ignore"):
            best_f = np.argmax(gains >= (top - _tie_tol(top))[:, None], axis=1)
        best_gain = gains[np.arange(m), best_f]
        split &= best_gain > 0.0

        k = np.flatnonzero(split)
        level["feature"][k] = best_f[k]
        level["threshold"][k] = thrs[k, best_f[k]]
        level["gain"][k] = best_gain[k]
        left_slot = np.full(m, -1)
        left_slot[k] = 2 * np.arange(k.size)
        child_tree = np.repeat(slot_tree[k], 2)
        child_first = np.concatenate([[0], np.cumsum(np.bincount(child_tree, minlength=n_trees))[:-1]])
        left_local = offset[slot_tree[k]] + left_slot[k] - child_first[slot_tree[k]]
        level["left"][k] = left_local
        level["right"][k] = left_local + 1

        keep = split[grp]
        samples, grp = samples[keep], grp[keep]
        go_right = X[samples, best_f[grp]] > level["threshold"][grp]
        grp = left_slot[grp] + go_right
        order = np.argsort(grp, kind="stable")
        samples, grp = samples[order], grp[order]
        slot_tree = child_tree
        depth += 1

    fields = {name: np.concatenate([lv[name] for lv in levels]) for name in levels[0]}
    order = np.argsort(fields.pop("tree"), kind="stable")
    bounds = np.cumsum(offset)[:-1]
    parts = {name: np.split(v[order], bounds) for name, v in fields.items()}
    return [Tree(**{name: parts[name][b].tolist() for name in parts}) for b in range(n_trees)]


def grow_tree(X: np.ndarray, y: np.ndarray, rng: np.random.Generator, max_features: int,
              max_depth: int = 8, min_samples_split: int = 2) -> Tree:
    """Single-tree form of :func:`grow_forest` over all rows of ``X``."""
    return grow_forest(X, y, [np.arange(len(y))], [rng], max_features, max_depth, min_samples_split)[0]


class RegressionForest(RegressorMixin, BaseEstimator):
    """Bagged variance-impurity regression trees.

    Each tree draws a bootstrap sample and a feature subset per node from its
    own generator seeded by ``(random_state, tree_index)``, so tree ``b`` does
    not depend on how many trees precede it.
    """

    def __init__(self, n_estimators: int = 50, max_depth: int = 8, max_features="third",
                 min_samples_split: int = 2, bootstrap: bool = True, random_state: int = 0):
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.max_features = max_features
        self.min_samples_split = min_samples_split
        self.bootstrap = bootstrap
        self.random_state = random_state

    def _n_candidates(self, n_features: int) -> int:
        if self.max_features == "third":
            return max(1, math.ceil(n_features / 3))
        if self.max_features is None:
            return n_features
        return max(1, min(n_features, int(self.max_features)))

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        if X.shape[0] < 2:
            raise ValueError("a forest needs at least 2 samples")
        n = X.shape[0]
        k = self._n_candidates(X.shape[1])
        rngs = [np.random.default_rng([int(self.random_state), b]) for b in range(self.n_estimators)]
        rows = [rng.integers(0, n, size=n) if self.bootstrap else np.arange(n) for rng in rngs]
        self.trees_ = grow_forest(X, y, rows, rngs, k, self.max_depth, self.min_samples_split)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "trees_")
        X = check_array(X)
        return np.array([np.mean([t.predict_one(row) for t in self.trees_]) for row in X])

    def impurity_reductions(self) -> np.ndarray:
        """Per-tree, per-feature summed impurity reduction, shape ``(B, F)``."""
        check_is_fitted(self, "trees_")
        out = np.zeros((len(self.trees_), self.n_features_in_))
        for b, tree in enumerate(self.trees_):
            for f, g in tree.splits():
                out[b, f] += g
        return out


def mdi_importance(forest: RegressionForest, delta: float = DELTA) -> ImportanceVector:
    """Mean over trees of the summed split gains per feature, plus ``delta``."""
    mdi = forest.impurity_reductions().mean(axis=0)
    return ImportanceVector("mdi", np.abs(mdi) + delta, delta)


# -- gradient-descent importance ---------------------------------------------

@dataclass
class GdState:
    theta: np.ndarray
    eta: float
    n_iter: int
    gradient: np.ndarray
    objective: float


def gd_gradient(X: np.ndarray, y: np.ndarray, theta: np.ndarray) -> tuple[np.ndarray, float]:
    """Clipped MSE gradient of ``X @ theta`` and the pre-step objective.

    Non-finite gradient entries become 0 before clipping to [-1, 1].
    """
    with np.errstate(all="ignore"):
        err = X @ theta - y
        grad = (2.0 / X.shape[0]) * (X.T @ err)
        objective = float(np.mean(err * err))
    grad = np.where(np.isfinite(grad), grad, 0.0)
    return np.clip(grad, -1.0, 1.0), objective


def gd_importance(X, y, eta: float = 0.001, n_iter: int = 10, delta: float = DELTA,
                  return_state: bool = False):
    """|theta| + delta after ``n_iter`` clipped gradient steps from theta = 1."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ValueError(f"dimension mismatch: X {X.shape}, y {y.shape}")
    if X.shape[0] < 1:
        raise ValueError("need at least one sample")
    theta = np.ones(X.shape[1])
    grad = np.zeros_like(theta)
    objective = math.nan
    for _ in range(n_iter):
        grad, objective = gd_gradient(X, y, theta)
        theta = theta - eta * grad
    fi = ImportanceVector("gd", np.abs(theta) + delta, delta)
    if return_state:
        return fi, GdState(theta, eta, n_iter, grad, objective)
    return fi


# -- estimator wrappers -------------------------------------------------------

class MDIImportance(TransformerMixin, BaseEstimator):
    """Fit a forest, keep the MDI scores, and reweight columns on transform."""

    def __init__(self, n_estimators: int = 50, max_depth: int = 8, max_features="third",
                 min_samples_split: int = 2, delta: float = DELTA, random_state: int = 0):
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.max_features = max_features
        self.min_samples_split = min_samples_split
        self.delta = delta
        self.random_state = random_state

    def fit(self, X, y):
        self.forest_ = RegressionForest(self.n_estimators, self.max_depth, self.max_features,
                                        self.min_samples_split, random_state=self.random_state).fit(X, y)
        self.importance_ = mdi_importance(self.forest_, self.delta)
        self.scores_ = self.importance_.scores
        self.n_features_in_ = self.forest_.n_features_in_
        return self

    def transform(self, X):
        check_is_fitted(self, "importance_")
        return apply_importance(check_array(X), self.importance_)


class GDImportance(TransformerMixin, BaseEstimator):
    def __init__(self, eta: float = 0.001, n_iter: int = 10, delta: float = DELTA):
        self.eta = eta
        self.n_iter = n_iter
        self.delta = delta

    def fit(self, X, y):
        # no finiteness check: the update itself zeroes non-finite gradients
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        self.importance_, self.state_ = gd_importance(X, y, self.eta, self.n_iter, self.delta, return_state=True)
        self.scores_ = self.importance_.scores
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "importance_")
        return apply_importance(np.asarray(X, dtype=float), self.importance_)


def compute_importance(method: str, X, y, seed: int = 0, **params) -> ImportanceVector:
    if method == "mdi":
        return MDIImportance(random_state=seed, **params).fit(X, y).importance_
    if method == "gd":
        return GDImportance(**params).fit(X, y).importance_
    raise ValueError(f"unknown importance method {method!r}")
