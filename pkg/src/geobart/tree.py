"""Binary regression trees, their prior, and the four Metropolis proposals.

Splitting rule: a row goes left when ``x[var] < cut``. Cut values are always
distinct observed values of the split variable, so a cut equal to the
smallest value in a node's data would leave the left child empty; proposals
only draw cuts that keep both children non-empty.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

MOVES = ("grow", "prune", "change", "swap")
DEFAULT_MOVE_PROBS = {"grow": 0.25, "prune": 0.25, "change": 0.40, "swap": 0.10}


def default_leaf_var(m: int, k: float = 2.0) -> float:
    """Leaf prior variance for a response scaled to [-0.5, 0.5]."""
    return (0.5 / (k * math.sqrt(m))) ** 2


@dataclass
class TreePriorConfig:
    alpha: float = 0.95
    beta: float = 2.0
    leaf_var: float = default_leaf_var(20)
    max_depth: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError("alpha must lie in [0, 1)")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.leaf_var < 0:
            raise ValueError("leaf_var must be non-negative")

    def split_prob(self, depth: int) -> float:
        if self.max_depth is not None and depth >= self.max_depth:
            return 0.0
        return self.alpha * (1.0 + depth) ** (-self.beta)


class CutpointTable:
    """Covariate matrix plus the sorted distinct values of each column."""

    def __init__(self, X):
        self.X = np.ascontiguousarray(np.asarray(X, dtype=float))
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        self.values = [np.unique(self.X[:, p]) for p in range(self.X.shape[1])]
        self.n_distinct = np.array([v.size for v in self.values])

    @property
    def n_vars(self) -> int:
        return self.X.shape[1]

    def cut_range(self, rows, p: int) -> tuple[int, int]:
        """Index range in ``values[p]`` of cuts splitting ``rows`` into two non-empty parts."""
        xs = self.X[rows, p]
        if xs.size < 2:
            return 0, 0
        v = self.values[p]
        lo = np.searchsorted(v, xs.min(), side="right")
        hi = np.searchsorted(v, xs.max(), side="right")
        return int(lo), int(hi)

    def split_options(self, rows) -> list[tuple[int, int, int]]:
        """``(var, lo, hi)`` for every variable with at least one valid cut."""
        out = []
        for p in range(self.n_vars):
            lo, hi = self.cut_range(rows, p)
            if hi > lo:
                out.append((p, lo, hi))
        return out


def as_cutpoints(covariates) -> CutpointTable:
    return covariates if isinstance(covariates, CutpointTable) else CutpointTable(covariates)


class DecisionTree:
    """Array-backed binary tree; node 0 is the root, ``var == -1`` marks a leaf."""

    __slots__ = ("var", "cut", "left", "right", "parent", "depth", "value")

    def __init__(self, value: float = 0.0):
        self.var = [-1]
        self.cut = [0.0]
        self.left = [-1]
        self.right = [-1]
        self.parent = [-1]
        self.depth = [0]
        self.value = [float(value)]

    def copy(self) -> "DecisionTree":
        t = DecisionTree.__new__(DecisionTree)
        for name in self.__slots__:
            setattr(t, name, list(getattr(self, name)))
        return t

    # structure queries

    def is_leaf(self, k: int) -> bool:
        return self.var[k] < 0

    def preorder(self) -> list[int]:
        out, stack = [], [0]
        while stack:
            k = stack.pop()
            out.append(k)
            if self.var[k] >= 0:
                stack.append(self.right[k])
                stack.append(self.left[k])
        return out

    def leaves(self) -> list[int]:
        return [k for k in self.preorder() if self.var[k] < 0]

    def internal_nodes(self) -> list[int]:
        return [k for k in self.preorder() if self.var[k] >= 0]

    def nog_nodes(self) -> list[int]:
        """Internal nodes whose children are both leaves (prunable)."""
        return [
            k for k in self.internal_nodes()
            if self.var[self.left[k]] < 0 and self.var[self.right[k]] < 0
        ]

    def swappable_pairs(self) -> list[tuple[int, int]]:
        pairs = []
        for k in self.internal_nodes():
            for c in (self.left[k], self.right[k]):
                if self.var[c] >= 0:
                    pairs.append((k, c))
        return pairs

    @property
    def n_leaves(self) -> int:
        return len(self.leaves())

    def max_depth(self) -> int:
        return max(self.depth[k] for k in self.preorder())

    def subtree_leaves(self, k: int) -> list[int]:
        out, stack = [], [k]
        while stack:
            j = stack.pop()
            if self.var[j] < 0:
                out.append(j)
            else:
                stack.extend((self.right[j], self.left[j]))
        return out

    # mutation

    def grow(self, k: int, var: int, cut: float, values=(0.0, 0.0)) -> tuple[int, int]:
        if self.var[k] >= 0:
            raise ValueError(f"node {k} is not a leaf")
        d = self.depth[k] + 1
        ids = []
        for v in values:
            self.var.append(-1)
            self.cut.append(0.0)
            self.left.append(-1)
            self.right.append(-1)
            self.parent.append(k)
            self.depth.append(d)
            self.value.append(float(v))
            ids.append(len(self.var) - 1)
        self.var[k], self.cut[k] = int(var), float(cut)
        self.left[k], self.right[k] = ids
        return ids[0], ids[1]

    def prune(self, k: int, value: float = 0.0) -> int:
        """Collapse node `k` (both children leaves) into a leaf; returns its new index."""
        if self.var[k] < 0 or self.var[self.left[k]] >= 0 or self.var[self.right[k]] >= 0:
            raise ValueError(f"node {k} is not prunable")
        self.var[k] = -1
        self.cut[k] = 0.0
        self.value[k] = float(value)
        self.left[k] = self.right[k] = -1
        return self._compact()[k]

    def _compact(self) -> dict:
        order = self.preorder()
        remap = {old: new for new, old in enumerate(order)}
        remap[-1] = -1
        for name in ("var", "cut", "depth", "value"):
            col = getattr(self, name)
            setattr(self, name, [col[k] for k in order])
        self.left = [remap[self.left[k]] for k in order]
        self.right = [remap[self.right[k]] for k in order]
        self.parent = [remap[self.parent[k]] for k in order]
        return remap

    # evaluation

    def route(self, X) -> np.ndarray:
        """Index of the leaf each row of `X` falls into."""
        X = np.asarray(X, dtype=float)
        node = np.zeros(X.shape[0], dtype=np.intp)
        for k in self.preorder():
            v = self.var[k]
            if v < 0:
                continue
            mask = node == k
            if mask.any():
                node[mask] = np.where(X[mask, v] < self.cut[k], self.left[k], self.right[k])
        return node

    def leaf_values(self) -> np.ndarray:
        return np.array([self.value[k] for k in self.leaves()])

    def set_leaf_values(self, values) -> None:
        for k, v in zip(self.leaves(), values, strict=True):
            self.value[k] = float(v)

    def predict(self, X) -> np.ndarray:
        return np.asarray(self.value)[self.route(X)]

    def scaled(self, factor: float) -> "DecisionTree":
        t = self.copy()
        t.value = [v * factor for v in t.value]
        return t

    # serialization

    def to_dict(self) -> dict:
        t = self.copy()
        t._compact()
        return {
            "var": t.var,
            "cut": t.cut,
            "left": t.left,
            "right": t.right,
            "depth": t.depth,
            "value": t.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DecisionTree":
        t = cls.__new__(cls)
        t.var = [int(v) for v in d["var"]]
        t.cut = [float(v) for v in d["cut"]]
        t.left = [int(v) for v in d["left"]]
        t.right = [int(v) for v in d["right"]]
        t.value = [float(v) for v in d["value"]]
        t.parent = [-1] * len(t.var)
        for k in range(len(t.var)):
            if t.var[k] >= 0:
                t.parent[t.left[k]] = k
                t.parent[t.right[k]] = k
        t.depth = [int(v) for v in d["depth"]] if "depth" in d else _depths(t)
        return t

    def structure_key(self) -> tuple:
        """Hashable description of the split structure (ignores leaf values)."""

        def rec(k):
            if self.var[k] < 0:
                return ()
            return (self.var[k], self.cut[k], rec(self.left[k]), rec(self.right[k]))

        return rec(0)

    def __repr__(self) -> str:
        return f"DecisionTree(leaves={self.n_leaves}, structure={self.structure_key()})"


def _depths(t: DecisionTree) -> list[int]:
    depth = [0] * len(t.var)
    for k in t.preorder():
        if t.var[k] >= 0:
            depth[t.left[k]] = depth[t.right[k]] = depth[k] + 1
    return depth


def tree_log_prior(tree: DecisionTree, config: TreePriorConfig, covariates) -> float:
    """Log prior of a tree structure.

    Each internal node at depth d contributes ``log(alpha (1+d)^-beta)``
    minus the log of the number of covariates and of the number of distinct
    values of its split variable; each leaf contributes
    ``log(1 - alpha (1+d)^-beta)``.
    """
    if isinstance(covariates, CutpointTable):
        n_distinct = covariates.n_distinct
    elif np.ndim(covariates) == 2:
        n_distinct = CutpointTable(covariates).n_distinct
    else:
        n_distinct = np.asarray(covariates)
    P = len(n_distinct)
    lp = 0.0
    for k in tree.preorder():
        ps = config.split_prob(tree.depth[k])
        if tree.var[k] >= 0:
            if ps <= 0.0:
                return -math.inf
            lp += math.log(ps) - math.log(P) - math.log(n_distinct[tree.var[k]])
        elif ps < 1.0:
            lp += math.log1p(-ps)
        else:
            return -math.inf
    return lp


def leaf_assignment(tree: DecisionTree, covariates) -> np.ndarray:
    """Binary n x b matrix; column t marks the rows routed to the t-th leaf (preorder)."""
    X = covariates.X if isinstance(covariates, CutpointTable) else np.asarray(covariates, float)
    if X.ndim == 1:
        X = X[:, None]
    node = tree.route(X)
    leaves = tree.leaves()
    col = np.full(len(tree.var), -1)
    col[leaves] = np.arange(len(leaves))
    C = np.zeros((X.shape[0], len(leaves)))
    C[np.arange(X.shape[0]), col[node]] = 1.0
    return C


def evaluate_forest(forest, covariates) -> np.ndarray:
    """Sum of the trees' leaf values at every row of `covariates`."""
    X = covariates.X if isinstance(covariates, CutpointTable) else np.asarray(covariates, float)
    if X.ndim == 1:
        X = X[:, None]
    out = np.zeros(X.shape[0])
    for t in forest:
        out += t.predict(X)
    return out


# proposals

class Proposal(NamedTuple):
    tree: DecisionTree
    log_ratio: float
    move: str
    nodes: np.ndarray  # leaf index of each covariate row under `tree`


def _growable(tree, cuts, nodes, config) -> dict:
    """Leaf -> split options, for leaves that can be grown."""
    out = {}
    for k in tree.leaves():
        if config is not None and config.split_prob(tree.depth[k]) <= 0.0:
            continue
        rows = np.flatnonzero(nodes == k)
        opts = cuts.split_options(rows)
        if opts:
            out[k] = opts
    return out


def _move_logprob(move, tree, growable, probs) -> float:
    feasible = {"grow": bool(growable)}
    has_internal = tree.var[0] >= 0
    feasible["prune"] = feasible["change"] = has_internal
    feasible["swap"] = has_internal and bool(tree.swappable_pairs())
    if not feasible[move]:
        return -math.inf
    total = sum(probs[m] for m in MOVES if feasible[m])
    return math.log(probs[move] / total)


def _rows_at(tree, k, nodes):
    return np.flatnonzero(np.isin(nodes, tree.subtree_leaves(k)))


def propose_move(tree: DecisionTree, rng: np.random.Generator, covariates, *,
                 config: TreePriorConfig | None = None, probs=None, nodes=None) -> Proposal:
    """Draw a GROW / PRUNE / CHANGE / SWAP proposal.

    Infeasible move types are excluded and the remaining probabilities
    renormalised; the returned log ratio ``log q(T|T*) - log q(T*|T)``
    accounts for that renormalisation in both directions. Leaves created
    or merged by the move carry value 0.
    """
    probs = probs or DEFAULT_MOVE_PROBS
    cuts = as_cutpoints(covariates)
    if nodes is None:
        nodes = tree.route(cuts.X)
    growable = _growable(tree, cuts, nodes, config)
    weights = {"grow": bool(growable)}
    has_internal = tree.var[0] >= 0
    pairs = tree.swappable_pairs() if has_internal else []
    weights["prune"] = weights["change"] = has_internal
    weights["swap"] = bool(pairs)
    feasible = [m for m in MOVES if weights[m] and probs[m] > 0]
    if not feasible:
        return Proposal(tree.copy(), 0.0, "none", nodes)
    p = np.array([probs[m] for m in feasible])
    move = feasible[rng.choice(len(feasible), p=p / p.sum())]
    log_fwd_move = math.log(probs[move] / p.sum())
    new = tree.copy()

    if move == "grow":
        leaves = list(growable)
        k = leaves[rng.integers(len(leaves))]
        opts = growable[k]
        var, lo, hi = opts[rng.integers(len(opts))]
        cut = cuts.values[var][rng.integers(lo, hi)]
        left, right = new.grow(k, var, cut)
        new_nodes = nodes.copy()
        rows = np.flatnonzero(nodes == k)
        new_nodes[rows] = np.where(cuts.X[rows, var] < cut, left, right)
        log_fwd = log_fwd_move - math.log(len(leaves)) - math.log(len(opts)) - math.log(hi - lo)
        new_growable = _growable(new, cuts, new_nodes, config)
        log_rev = _move_logprob("prune", new, new_growable, probs) - math.log(len(new.nog_nodes()))
        return Proposal(new, log_rev - log_fwd, move, new_nodes)

    if move == "prune":
        nogs = tree.nog_nodes()
        k = nogs[rng.integers(len(nogs))]
        var, cut = tree.var[k], tree.cut[k]
        rows = _rows_at(tree, k, nodes)
        kk = new.prune(k)
        new_nodes = new.route(cuts.X)
        log_fwd = log_fwd_move - math.log(len(nogs))
        new_growable = _growable(new, cuts, new_nodes, config)
        lo, hi = cuts.cut_range(rows, var)
        opts = new_growable.get(kk, [])
        if hi <= lo or not (cuts.values[var][lo] <= cut <= cuts.values[var][hi - 1]):
            # the pruned split could not have been proposed by GROW
            log_rev = -math.inf
        else:
            log_rev = (_move_logprob("grow", new, new_growable, probs)
                       - math.log(len(new_growable)) - math.log(len(opts)) - math.log(hi - lo))
        return Proposal(new, log_rev - log_fwd, move, new_nodes)

    if move == "change":
        internal = tree.internal_nodes()
        k = internal[rng.integers(len(internal))]
        rows = _rows_at(tree, k, nodes)
        opts = cuts.split_options(rows)
        var, lo, hi = opts[rng.integers(len(opts))]
        new.var[k] = int(var)
        new.cut[k] = float(cuts.values[var][rng.integers(lo, hi)])
        old_lo, old_hi = cuts.cut_range(rows, tree.var[k])
        # the cut is drawn from a variable-specific range, so the ratio keeps its size
        log_cut = math.log(hi - lo) - math.log(max(old_hi - old_lo, 1))
    else:
        log_cut = 0.0
        a, b = pairs[rng.integers(len(pairs))]
        new.var[a], new.var[b] = new.var[b], new.var[a]
        new.cut[a], new.cut[b] = new.cut[b], new.cut[a]
    new_nodes = new.route(cuts.X)
    new_growable = _growable(new, cuts, new_nodes, config)
    log_ratio = _move_logprob(move, new, new_growable, probs) - log_fwd_move + log_cut
    return Proposal(new, log_ratio, move, new_nodes)


def has_empty_leaf(tree: DecisionTree, nodes) -> bool:
    return bool(np.any(np.bincount(nodes, minlength=len(tree.var))[tree.leaves()] == 0))


def sample_prior_tree(rng: np.random.Generator, config: TreePriorConfig, covariates,
                      max_nodes: int = 10_000) -> DecisionTree:
    """Forward simulation of a tree structure from its prior (leaf values 0)."""
    cuts = as_cutpoints(covariates)
    tree = DecisionTree()
    stack = [0]
    while stack:
        k = stack.pop()
        if rng.random() < config.split_prob(tree.depth[k]):
            var = int(rng.integers(cuts.n_vars))
            cut = cuts.values[var][rng.integers(cuts.n_distinct[var])]
            left, right = tree.grow(k, var, cut)
            stack.extend((right, left))
            if len(tree.var) > max_nodes:
                raise RuntimeError("prior tree exceeded max_nodes")
    return tree
