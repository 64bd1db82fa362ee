"""Target-aware feature encoders built on single-feature decision trees.

Each feature column gets its own shallow CART tree fit against the target:
Gini impurity for classification, variance for regression. Categorical
columns are encoded by replacing each category with its leaf's target
statistic; numeric columns are discretized into the intervals the tree's
thresholds carve out, and the interval index feeds a learned embedding.

Split search is exact and deterministic: numeric candidates are midpoints
between consecutive distinct values (ties broken toward the lowest
threshold), categorical candidates are prefixes of the categories ordered
by per-category target mean, the classic CART reduction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError

_TASKS = ("regression", "binclass", "multiclass")


@dataclass
class TreeNode:
    """Internal node (threshold or left-category set) or leaf (stat)."""

    threshold: float = None
    left_categories: frozenset = None
    left: int = None
    right: int = None
    stat: object = None  # leaf payload: float mean or probability vector
    count: int = 0

    @property
    def is_leaf(self) -> bool:
        return self.left is None


@dataclass
class SplitTree:
    """A fitted single-feature tree, nodes stored as a preorder array."""

    kind: str  # numeric | categorical
    task: str
    n_classes: int  # 0 for regression
    min_samples_leaf: int
    min_impurity_decrease: float
    depth: int
    nodes: list = field(default_factory=list)

    @property
    def n_leaves(self) -> int:
        return sum(1 for n in self.nodes if n.is_leaf)

    def route(self, value) -> TreeNode:
        """Walk a single value to its leaf."""
        node = self.nodes[0]
        while not node.is_leaf:
            if self.kind == "numeric":
                node = self.nodes[node.left if value < node.threshold else node.right]
            else:
                node = self.nodes[
                    node.left if value in node.left_categories else node.right
                ]
        return node

    def thresholds(self) -> np.ndarray:
        """Sorted numeric split points; one fewer than the leaf count."""
        if self.kind != "numeric":
            raise ConfigError("thresholds are only defined for numeric trees")
        ts = np.sort([n.threshold for n in self.nodes if not n.is_leaf])
        if ts.size != self.n_leaves - 1:
            raise AssertionError("duplicate thresholds in a single-feature tree")
        return ts

    def to_dict(self) -> dict:
        nodes = []
        for n in self.nodes:
            if n.is_leaf:
                stat = n.stat.tolist() if isinstance(n.stat, np.ndarray) else n.stat
                nodes.append({"stat": stat, "count": n.count})
            elif self.kind == "numeric":
                nodes.append(
                    {"threshold": n.threshold, "left": n.left, "right": n.right,
                     "count": n.count}
                )
            else:
                nodes.append(
                    {"left_categories": sorted(n.left_categories), "left": n.left,
                     "right": n.right, "count": n.count}
                )
        return {
            "version": 1,
            "kind": self.kind,
            "task": self.task,
            "n_classes": self.n_classes,
            "min_samples_leaf": self.min_samples_leaf,
            "min_impurity_decrease": self.min_impurity_decrease,
            "depth": self.depth,
            "nodes": nodes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SplitTree":
        if d.get("version") != 1:
            raise DataError(f"unsupported tree serialization version: {d.get('version')}")
        nodes = []
        for nd in d["nodes"]:
            if "stat" in nd:
                stat = nd["stat"]
                if isinstance(stat, list):
                    stat = np.asarray(stat, dtype=np.float64)
                nodes.append(TreeNode(stat=stat, count=nd["count"]))
            elif "threshold" in nd:
                nodes.append(
                    TreeNode(threshold=nd["threshold"], left=nd["left"],
                             right=nd["right"], count=nd["count"])
                )
            else:
                nodes.append(
                    TreeNode(left_categories=frozenset(nd["left_categories"]),
                             left=nd["left"], right=nd["right"], count=nd["count"])
                )
        return cls(
            kind=d["kind"],
            task=d["task"],
            n_classes=d["n_classes"],
            min_samples_leaf=d["min_samples_leaf"],
            min_impurity_decrease=d["min_impurity_decrease"],
            depth=d["depth"],
            nodes=nodes,
        )


def fit_tree(
    x,
    y,
    task: str,
    min_samples_leaf: int,
    min_impurity_decrease: float,
    max_depth: int = 8,
    n_classes: int = None,
) -> SplitTree:
    """Greedy exact CART on one feature column.

    Gain is the sample-weighted fractional impurity decrease
    ``(n_node/n_root) * (imp - n_l/n*imp_l - n_r/n*imp_r)``; a split is
    taken only when its gain is positive and at least
    ``min_impurity_decrease``, both children keep ``min_samples_leaf``
    samples, and the node is impure and above ``max_depth`` remains.
    """
    if task not in _TASKS:
        raise ConfigError(f"unknown task '{task}'")
    if min_samples_leaf < 1:
        raise ConfigError(f"min_samples_leaf must be >= 1, got {min_samples_leaf}")
    if min_impurity_decrease < 0:
        raise ConfigError("min_impurity_decrease must be >= 0")
    if max_depth < 0:
        raise ConfigError("max_depth must be >= 0")

    x = np.asarray(x)
    if x.ndim != 1:
        raise ConfigError(f"expected a 1-D column, got shape {x.shape}")
    if x.size == 0:
        raise DataError("cannot fit a tree on an empty column")
    if len(x) != len(y):
        raise DataError(f"column and target length differ: {len(x)} vs {len(y)}")

    categorical = x.dtype == object or x.dtype.kind in "US"
    if not categorical:
        x = x.astype(np.float64)
        if not np.all(np.isfinite(x)):
            raise DataError("numeric column contains non-finite values")

    classification = task != "regression"
    if classification:
        y = np.asarray(y, dtype=np.int64)
        k = 2 if task == "binclass" else (n_classes or int(y.max()) + 1)
        if y.min() < 0 or y.max() >= k:
            raise DataError(f"class codes out of range [0, {k})")
    else:
        y = np.asarray(y, dtype=np.float64)
        k = 0
    n_root = y.size

    if classification and task == "multiclass":
        # reference class for ordering categorical prefixes
        majority = int(np.argmax(np.bincount(y, minlength=k)))
    else:
        majority = 1  # binclass orders by p(class 1); unused for regression

    def leaf_stat(idx):
        if classification:
            return np.bincount(y[idx], minlength=k) / idx.size
        return float(y[idx].mean())

    def impurity(idx):
        if classification:
            p = np.bincount(y[idx], minlength=k) / idx.size
            return float(1.0 - (p * p).sum())
        return float(np.var(y[idx]))

    def split_numeric(idx, imp_node):
        xs = x[idx]
        order = np.argsort(xs, kind="stable")
        xs = xs[order]
        yo = y[idx][order]
        n = idx.size
        cut = np.nonzero(xs[:-1] < xs[1:])[0]  # left block ends at position cut
        if cut.size == 0:
            return None
        nl = cut + 1
        nr = n - nl
        ok = (nl >= min_samples_leaf) & (nr >= min_samples_leaf)
        if not ok.any():
            return None
        cut, nl, nr = cut[ok], nl[ok], nr[ok]
        if classification:
            onehot = np.zeros((n, k))
            onehot[np.arange(n), yo] = 1.0
            cum = onehot.cumsum(axis=0)
            cl = cum[cut]
            cr = cum[-1] - cl
            il = 1.0 - ((cl / nl[:, None]) ** 2).sum(axis=1)
            ir = 1.0 - ((cr / nr[:, None]) ** 2).sum(axis=1)
        else:
            s1 = yo.cumsum()
            s2 = (yo * yo).cumsum()
            ml = s1[cut] / nl
            mr = (s1[-1] - s1[cut]) / nr
            il = np.maximum(s2[cut] / nl - ml * ml, 0.0)
            ir = np.maximum((s2[-1] - s2[cut]) / nr - mr * mr, 0.0)
        gain = (n / n_root) * (imp_node - (nl * il + nr * ir) / n)
        b = int(np.argmax(gain))  # first max = lowest threshold
        if gain[b] <= 0.0 or gain[b] < min_impurity_decrease:
            return None
        t = 0.5 * (xs[cut[b]] + xs[cut[b] + 1])
        mask = x[idx] < t
        return idx[mask], idx[~mask], {"threshold": float(t)}

    def split_categorical(idx, imp_node):
        vals = x[idx]
        yo = y[idx]
        groups = {}
        for pos, v in enumerate(vals):
            groups.setdefault(v, []).append(pos)
        if len(groups) < 2:
            return None
        n = idx.size
        per_cat = []
        for c in sorted(groups):
            gi = np.asarray(groups[c])
            if classification:
                counts = np.bincount(yo[gi], minlength=k).astype(np.float64)
                key = counts[majority] / gi.size
                per_cat.append((key, c, gi.size, counts))
            else:
                s = yo[gi]
                per_cat.append(
                    (float(s.mean()), c, gi.size, (float(s.sum()), float((s * s).sum())))
                )
        per_cat.sort(key=lambda t: (t[0], t[1]))

        best_gain, best_k = -np.inf, None
        nl = 0
        acc_counts = np.zeros(k) if classification else [0.0, 0.0]
        tot_counts = (
            np.bincount(yo, minlength=k).astype(np.float64)
            if classification
            else [float(yo.sum()), float((yo * yo).sum())]
        )
        for j in range(len(per_cat) - 1):
            _, _, sz, agg = per_cat[j]
            nl += sz
            nr = n - nl
            if classification:
                acc_counts = acc_counts + agg
            else:
                acc_counts = [acc_counts[0] + agg[0], acc_counts[1] + agg[1]]
            if nl < min_samples_leaf or nr < min_samples_leaf:
                continue
            if classification:
                pl = acc_counts / nl
                pr = (tot_counts - acc_counts) / nr
                il = 1.0 - (pl * pl).sum()
                ir = 1.0 - (pr * pr).sum()
            else:
                ml = acc_counts[0] / nl
                mr = (tot_counts[0] - acc_counts[0]) / nr
                il = max(acc_counts[1] / nl - ml * ml, 0.0)
                ir = max((tot_counts[1] - acc_counts[1]) / nr - mr * mr, 0.0)
            gain = (n / n_root) * (imp_node - (nl * il + nr * ir) / n)
            if gain > best_gain:
                best_gain, best_k = gain, j + 1
        if best_k is None or best_gain <= 0.0 or best_gain < min_impurity_decrease:
            return None
        left_set = frozenset(c for _, c, _, _ in per_cat[:best_k])
        mask = np.fromiter((v in left_set for v in vals), dtype=bool, count=n)
        return idx[mask], idx[~mask], {"left_categories": left_set}

    split_fn = split_categorical if categorical else split_numeric
    nodes = []

    def build(idx, depth):
        i_node = len(nodes)
        nodes.append(None)
        imp = impurity(idx)
        found = None
        if depth < max_depth and idx.size >= 2 * min_samples_leaf and imp > 0.0:
            found = split_fn(idx, imp)
        if found is None:
            nodes[i_node] = TreeNode(stat=leaf_stat(idx), count=int(idx.size))
            return i_node, 0
        left_idx, right_idx, payload = found
        l, dl = build(left_idx, depth + 1)
        r, dr = build(right_idx, depth + 1)
        nodes[i_node] = TreeNode(left=l, right=r, count=int(idx.size), **payload)
        return i_node, 1 + max(dl, dr)

    _, depth = build(np.arange(n_root), 0)
    return SplitTree(
        kind="categorical" if categorical else "numeric",
        task=task,
        n_classes=k,
        min_samples_leaf=int(min_samples_leaf),
        min_impurity_decrease=float(min_impurity_decrease),
        depth=depth,
        nodes=nodes,
    )


class DecisionTreeEncoder:
    """Replace each category with the target statistic of its tree leaf.

    Binclass codes are the leaf probability of class 1, multiclass codes
    the full leaf probability vector, regression codes the leaf mean.
    Unseen categories fall back to the global training statistic.
    """

    def __init__(self, min_samples_leaf: int, min_impurity_decrease: float,
                 max_depth: int = 8):
        self.min_samples_leaf = min_samples_leaf
        self.min_impurity_decrease = min_impurity_decrease
        self.max_depth = max_depth
        self.tree_ = None
        self.codes_ = None
        self.fallback_ = None
        self.task_ = None

    def fit(self, values, y, task: str, n_classes: int = None):
        values = np.asarray(values, dtype=object)
        self.tree_ = fit_tree(
            values, y, task, self.min_samples_leaf, self.min_impurity_decrease,
            self.max_depth, n_classes,
        )
        self.task_ = task

        def to_code(stat):
            if task == "binclass":
                return float(stat[1])
            if task == "multiclass":
                return np.asarray(stat, dtype=np.float64)
            return float(stat)

        self.codes_ = {
            c: to_code(self.tree_.route(c).stat) for c in sorted(set(values.tolist()))
        }
        if task == "regression":
            self.fallback_ = float(np.asarray(y, dtype=np.float64).mean())
        else:
            k = self.tree_.n_classes
            prior = np.bincount(np.asarray(y, np.int64), minlength=k) / len(y)
            self.fallback_ = float(prior[1]) if task == "binclass" else prior

    def code_for(self, value):
        """Code of one category; the global prior when unseen in training."""
        if self.codes_ is None:
            raise RuntimeError("code_for called before fit")
        return self.codes_.get(value, self.fallback_)

    def transform(self, values) -> np.ndarray:
        if self.codes_ is None:
            raise RuntimeError("transform called before fit")
        values = np.asarray(values, dtype=object)
        if self.task_ == "multiclass":
            return np.stack([self.code_for(v) for v in values])
        return np.asarray([self.code_for(v) for v in values], dtype=np.float64)

    def to_dict(self) -> dict:
        d = {"version": 1, "task": self.task_, "tree": self.tree_.to_dict()}
        if self.task_ == "multiclass":
            d["codes"] = {c: v.tolist() for c, v in self.codes_.items()}
            d["fallback"] = self.fallback_.tolist()
        else:
            d["codes"] = dict(self.codes_)
            d["fallback"] = self.fallback_
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DecisionTreeEncoder":
        if d.get("version") != 1:
            raise DataError(f"unsupported encoder version: {d.get('version')}")
        tree = SplitTree.from_dict(d["tree"])
        enc = cls(tree.min_samples_leaf, tree.min_impurity_decrease)
        enc.tree_ = tree
        enc.task_ = d["task"]
        if d["task"] == "multiclass":
            enc.codes_ = {
                c: np.asarray(v, dtype=np.float64) for c, v in d["codes"].items()
            }
            enc.fallback_ = np.asarray(d["fallback"], dtype=np.float64)
        else:
            enc.codes_ = dict(d["codes"])
            enc.fallback_ = d["fallback"]
        return enc


class TreeBinner:
    """Supervised interval binning of a numeric column from tree leaves.

    The fitted tree's thresholds become bin edges; values map to the index
    of their interval, boundaries belonging to the right bin (mirroring the
    strict ``x < t`` left-branch rule). Bin count equals leaf count.
    """

    def __init__(self, min_samples_leaf: int, min_impurity_decrease: float,
                 max_depth: int = 8):
        self.min_samples_leaf = min_samples_leaf
        self.min_impurity_decrease = min_impurity_decrease
        self.max_depth = max_depth
        self.tree_ = None
        self.edges_ = None

    def fit(self, x, y, task: str, n_classes: int = None):
        self.tree_ = fit_tree(
            np.asarray(x, dtype=np.float64), y, task, self.min_samples_leaf,
            self.min_impurity_decrease, self.max_depth, n_classes,
        )
        self.edges_ = self.tree_.thresholds()

    @property
    def n_bins(self) -> int:
        if self.edges_ is None:
            raise RuntimeError("n_bins read before fit")
        return len(self.edges_) + 1

    def transform(self, x) -> np.ndarray:
        if self.edges_ is None:
            raise RuntimeError("transform called before fit")
        x = np.asarray(x, dtype=np.float64)
        return np.searchsorted(self.edges_, x, side="right").astype(np.int64)

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "edges": self.edges_.tolist(),
            "tree": self.tree_.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TreeBinner":
        if d.get("version") != 1:
            raise DataError(f"unsupported binner version: {d.get('version')}")
        tree = SplitTree.from_dict(d["tree"])
        binner = cls(tree.min_samples_leaf, tree.min_impurity_decrease)
        binner.tree_ = tree
        binner.edges_ = np.asarray(d["edges"], dtype=np.float64)
        return binner
