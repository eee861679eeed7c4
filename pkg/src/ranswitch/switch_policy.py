"""Depth-2 Gini decision tree over the selected KPM set: training,
inference, evaluation metrics and feature importances.

Training optimizes the total leaf impurity of the whole depth-limited tree
(root split chosen with its subtrees' best attainable impurity in view, not
just the root's own gain). For depth 1 this reduces to greedy CART; for
depth 2 it also recovers splits whose payoff only appears one level down.
Candidate thresholds sit at midpoints between consecutive distinct sorted
feature values. Ties break toward the lower feature index, then the lower
threshold.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .rng import stream
from .validation import (ConfigurationError, ContractViolation, ParamsMixin,
                         check_2d_features)

FEATURE_ORDER = (
    "phy_throughput", "mcs_index", "pdu_length", "ndi", "rsrp",
    "snr_db", "mac_throughput", "lcid4_throughput", "mac_rx_bytes",
    "lcid4_rx_bytes",
)

LABEL_AI = 0
LABEL_MMSE = 1


@dataclass(frozen=True)
class LabeledDataset:
    x: np.ndarray
    y: np.ndarray
    feature_names: tuple = FEATURE_ORDER

    def __post_init__(self):
        x = check_2d_features(self.x, n_features=len(self.feature_names))
        y = np.asarray(self.y, dtype=int)
        if y.ndim != 1 or len(y) != len(x):
            raise ContractViolation("labels must be 1-D and aligned with rows")
        if not np.all((y == 0) | (y == 1)):
            raise ContractViolation("labels must be 0 or 1")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return len(self.y)

    def split(self, seed: int, test_fraction: float = 0.2):
        """Seeded shuffle into (train, test)."""
        if not 0.0 < test_fraction < 1.0:
            raise ConfigurationError("test_fraction must lie in (0, 1)")
        perm = stream(seed, "split").permutation(len(self))
        n_test = max(1, int(round(len(self) * test_fraction)))
        test_idx, train_idx = perm[:n_test], perm[n_test:]
        return (LabeledDataset(self.x[train_idx], self.y[train_idx], self.feature_names),
                LabeledDataset(self.x[test_idx], self.y[test_idx], self.feature_names))


@dataclass
class Node:
    counts: tuple          # (n of label 0, n of label 1) on training data
    feature: Optional[int] = None
    threshold: Optional[float] = None
    left: Optional["Node"] = None
    right: Optional["Node"] = None

    @property
    def is_leaf(self) -> bool:
        return self.feature is None

    @property
    def label(self) -> int:
        # count tie predicts 1: MMSE is the fail-safe default
        return LABEL_AI if self.counts[0] > self.counts[1] else LABEL_MMSE


@dataclass
class TreeModel:
    root: Node
    feature_names: tuple = FEATURE_ORDER

    def depth(self) -> int:
        def d(node):
            return 0 if node.is_leaf else 1 + max(d(node.left), d(node.right))
        return d(self.root)

    def nodes(self):
        out, stack = [], [self.root]
        while stack:
            n = stack.pop(0)
            out.append(n)
            if not n.is_leaf:
                stack += [n.left, n.right]
        return out


def _counts(y) -> tuple:
    n0 = int(np.count_nonzero(y == 0))
    return (n0, len(y) - n0)


def _leaf_total(counts) -> float:
    """n * gini, the unnormalized impurity contribution of a leaf."""
    n = counts[0] + counts[1]
    if n == 0:
        return 0.0
    return n - (counts[0] ** 2 + counts[1] ** 2) / n


def _split_candidates(xs: np.ndarray, ys: np.ndarray):
    """Totals of every midpoint split of one pre-sorted column.

    Returns (thresholds, totals) where totals[k] = n_l*g_l + n_r*g_r.
    """
    n = len(xs)
    cut = np.nonzero(xs[:-1] < xs[1:])[0]
    if len(cut) == 0:
        return None, None
    thresholds = 0.5 * (xs[cut] + xs[cut + 1])
    c0 = np.cumsum(ys == 0)[cut].astype(float)
    n_l = (cut + 1).astype(float)
    c1 = n_l - c0
    t0, t1 = float(np.count_nonzero(ys == 0)), float(np.count_nonzero(ys == 1))
    r0, r1 = t0 - c0, t1 - c1
    n_r = n - n_l
    totals = (n_l - (c0 ** 2 + c1 ** 2) / n_l) + (n_r - (r0 ** 2 + r1 ** 2) / n_r)
    return thresholds, totals


class _Sorted:
    """Per-feature stable sort orders, computed once and filtered per subset."""

    def __init__(self, x: np.ndarray):
        self.x = x
        self.orders = [np.argsort(x[:, f], kind="stable") for f in range(x.shape[1])]

    def column(self, f: int, mask: np.ndarray):
        order = self.orders[f]
        idx = order[mask[order]]
        return self.x[idx, f], idx


def _best_depth1(sorted_x: _Sorted, y: np.ndarray, mask: np.ndarray):
    """Best single split of the masked subset, or None if nothing improves.

    Returns (total_impurity, feature, threshold) with the leaf total when no
    split strictly beats staying a leaf.
    """
    counts = _counts(y[mask])
    best_total = _leaf_total(counts)
    best = (best_total, None, None)
    if counts[0] == 0 or counts[1] == 0:
        return best
    for f in range(sorted_x.x.shape[1]):
        xs, idx = sorted_x.column(f, mask)
        thresholds, totals = _split_candidates(xs, y[idx])
        if thresholds is None:
            continue
        k = int(np.argmin(totals))
        if totals[k] < best[0]:
            best = (float(totals[k]), f, float(thresholds[k]))
    return best


def _leaf(y_subset) -> Node:
    return Node(counts=_counts(y_subset))


def train(data: LabeledDataset, max_depth: int = 2) -> TreeModel:
    if len(data) == 0:
        raise ContractViolation("cannot train on an empty dataset")
    if max_depth not in (0, 1, 2):
        raise ConfigurationError("max_depth must be 0, 1 or 2")
    x, y = data.x, data.y
    root_counts = _counts(y)
    if max_depth == 0 or root_counts[0] == 0 or root_counts[1] == 0:
        return TreeModel(Node(counts=root_counts), data.feature_names)

    sx = _Sorted(x)
    full = np.ones(len(y), dtype=bool)

    if max_depth == 1:
        total, f, t = _best_depth1(sx, y, full)
        if f is None:
            return TreeModel(Node(counts=root_counts), data.feature_names)
        lmask = x[:, f] <= t
        root = Node(counts=root_counts, feature=f, threshold=t,
                    left=_leaf(y[lmask]), right=_leaf(y[~lmask]))
        return TreeModel(root, data.feature_names)

    # depth 2: for every candidate root split, score the total leaf impurity
    # assuming each child takes its own best split (or stays a leaf); keep
    # the minimum. First candidate in (feature, threshold) order wins ties,
    # and a zero total cannot be beaten, so the scan stops there.
    best_total = _leaf_total(root_counts)
    best_root = None
    for f in range(x.shape[1]):
        xs, idx = sx.column(f, full)
        thresholds, _ = _split_candidates(xs, y[idx])
        if thresholds is None:
            continue
        for t in thresholds:
            lmask = x[:, f] <= t
            l_total, lf, lt = _best_depth1(sx, y, lmask)
            r_total, rf, rt = _best_depth1(sx, y, ~lmask)
            total = l_total + r_total
            if total < best_total:
                best_total = total
                best_root = (f, float(t), (lf, lt), (rf, rt))
                if best_total == 0.0:
                    break
        if best_total == 0.0:
            break

    if best_root is None:
        return TreeModel(Node(counts=root_counts), data.feature_names)

    f, t, (lf, lt), (rf, rt) = best_root
    lmask = x[:, f] <= t

    def child(mask, cf, ct):
        if cf is None:
            return _leaf(y[mask])
        sub = mask & (x[:, cf] <= ct)
        return Node(counts=_counts(y[mask]), feature=cf, threshold=ct,
                    left=_leaf(y[sub]), right=_leaf(y[mask & ~sub]))

    root = Node(counts=root_counts, feature=f, threshold=t,
                left=child(lmask, lf, lt), right=child(~lmask, rf, rt))
    return TreeModel(root, data.feature_names)


def predict(tree: TreeModel, x) -> np.ndarray | int:
    """Root-to-leaf descent; values equal to a threshold go left."""
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    rows = check_2d_features(arr, n_features=len(tree.feature_names))
    out = np.empty(len(rows), dtype=int)
    for i, row in enumerate(rows):
        node = tree.root
        while not node.is_leaf:
            node = node.left if row[node.feature] <= node.threshold else node.right
        out[i] = node.label
    return int(out[0]) if single else out


@dataclass(frozen=True)
class PolicyMetrics:
    accuracy: Optional[float]
    precision: Optional[float]
    specificity: Optional[float]
    recall: Optional[float]
    f1: Optional[float]

    def as_dict(self):
        return {"accuracy": self.accuracy, "precision": self.precision,
                "specificity": self.specificity, "recall": self.recall,
                "f1": self.f1}


def metrics_from_confusion(tp: int, fn: int, fp: int, tn: int) -> PolicyMetrics:
    """Positive class is label 0 (the AI expert). Zero-denominator ratios
    come back as None rather than 0."""
    def ratio(num, den):
        return num / den if den > 0 else None
    n = tp + fn + fp + tn
    accuracy = ratio(tp + tn, n)
    precision = ratio(tp, tp + fp)
    recall = ratio(tp, tp + fn)
    specificity = ratio(tn, tn + fp)
    f1 = None
    if precision is not None and recall is not None and precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    return PolicyMetrics(accuracy, precision, specificity, recall, f1)


def confusion(tree: TreeModel, test: LabeledDataset) -> tuple:
    pred = predict(tree, test.x)
    tp = int(np.count_nonzero((test.y == LABEL_AI) & (pred == LABEL_AI)))
    fn = int(np.count_nonzero((test.y == LABEL_AI) & (pred != LABEL_AI)))
    fp = int(np.count_nonzero((test.y != LABEL_AI) & (pred == LABEL_AI)))
    tn = int(np.count_nonzero((test.y != LABEL_AI) & (pred != LABEL_AI)))
    return tp, fn, fp, tn


def evaluate(tree: TreeModel, test: LabeledDataset) -> PolicyMetrics:
    if len(test) == 0:
        raise ContractViolation("cannot evaluate on an empty dataset")
    return metrics_from_confusion(*confusion(tree, test))


def feature_importance(tree: TreeModel) -> dict:
    """Gini importance: weighted impurity decrease per split feature,
    normalized to sum 1. A splitless tree yields all zeros."""
    weights = dict.fromkeys(tree.feature_names, 0.0)
    n_root = sum(tree.root.counts)

    def walk(node):
        if node.is_leaf:
            return
        dec = (_leaf_total(node.counts) - _leaf_total(node.left.counts)
               - _leaf_total(node.right.counts)) / n_root
        weights[tree.feature_names[node.feature]] += dec
        walk(node.left)
        walk(node.right)

    walk(tree.root)
    total = sum(weights.values())
    if total > 0:
        weights = {k: v / total for k, v in weights.items()}
    return weights


def has_split(tree: TreeModel) -> bool:
    return not tree.root.is_leaf


# -- text serialization -------------------------------------------------

def to_text(tree: TreeModel) -> str:
    lines = ["tree v1", "features: " + ",".join(tree.feature_names)]
    counter = [0]

    def emit(node):
        nid = counter[0]
        counter[0] += 1
        if node.is_leaf:
            lines.append(f"{nid} leaf label={node.label} "
                         f"counts={node.counts[0]},{node.counts[1]}")
            return nid
        placeholder = len(lines)
        lines.append("")
        left_id = emit(node.left)
        right_id = emit(node.right)
        name = tree.feature_names[node.feature]
        lines[placeholder] = (
            f"{nid} split {name} <= {node.threshold!r} "
            f"counts={node.counts[0]},{node.counts[1]} "
            f"left={left_id} right={right_id}")
        return nid

    emit(tree.root)
    return "\n".join(lines) + "\n"


def from_text(text: str) -> TreeModel:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].strip() != "tree v1":
        raise ConfigurationError("unrecognized tree format")
    if not lines[1].startswith("features:"):
        raise ConfigurationError("missing feature list")
    names = tuple(lines[1].split(":", 1)[1].strip().split(","))
    nodes: dict[int, dict] = {}
    for ln in lines[2:]:
        parts = ln.split()
        nid = int(parts[0])
        if parts[1] == "leaf":
            counts = tuple(int(v) for v in parts[3].split("=")[1].split(","))
            nodes[nid] = {"counts": counts}
        elif parts[1] == "split":
            counts = tuple(int(v) for v in parts[5].split("=")[1].split(","))
            nodes[nid] = {
                "counts": counts,
                "feature": names.index(parts[2]),
                "threshold": float(parts[4]),
                "left": int(parts[6].split("=")[1]),
                "right": int(parts[7].split("=")[1]),
            }
        else:
            raise ConfigurationError(f"bad tree line: {ln}")

    def build(nid) -> Node:
        spec = nodes[nid]
        if "feature" not in spec:
            return Node(counts=spec["counts"])
        return Node(counts=spec["counts"], feature=spec["feature"],
                    threshold=spec["threshold"],
                    left=build(spec["left"]), right=build(spec["right"]))

    return TreeModel(build(0), names)


def save_tree(tree: TreeModel, path):
    with open(path, "w") as f:
        f.write(to_text(tree))


def load_tree(path) -> TreeModel:
    with open(path) as f:
        return from_text(f.read())


class TreePolicy(ParamsMixin):
    """Estimator-style wrapper: fit(X, y), predict(X), with the trained
    TreeModel under tree_."""

    def __init__(self, max_depth: int = 2, feature_names=FEATURE_ORDER):
        self.max_depth = max_depth
        self.feature_names = feature_names

    def fit(self, x, y):
        data = LabeledDataset(np.asarray(x, dtype=float), y,
                              tuple(self.feature_names))
        self.tree_ = train(data, self.max_depth)
        self.importances_ = feature_importance(self.tree_)
        return self

    def predict(self, x):
        if not hasattr(self, "tree_"):
            raise ConfigurationError("TreePolicy is not fitted")
        return predict(self.tree_, x)

    def score(self, x, y) -> float:
        pred = self.predict(x)
        return float(np.mean(np.asarray(pred) == np.asarray(y, dtype=int)))


def records_to_features(records, names=FEATURE_ORDER) -> np.ndarray:
    return np.array([[float(getattr(rec, n)) for n in names] for rec in records])
