"""Latent actions: density-weighted recursive bipartitions of the unit box."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

KMEANS_MAX_ITER = 50
SVM_C = 1.0
SVM_MAX_ITER = 300


@dataclass(frozen=True)
class Hyperplane:
    """Separator ``w . u + b``; the non-negative side is the good child."""

    w: np.ndarray
    b: float

    def __post_init__(self):
        if not np.linalg.norm(self.w) > 0:
            raise ValueError("hyperplane normal must be non-zero")

    def value(self, u) -> np.ndarray:
        return np.asarray(u, dtype=float) @ self.w + self.b

    def good_side(self, u) -> np.ndarray:
        return self.value(u) >= 0.0


def inverse_density_weights(rho) -> np.ndarray:
    """Normalized inverse-density weights of the records of one node."""
    inv = 1.0 / np.asarray(rho, dtype=float)
    return inv / inv.sum()


# -- latent action learning ------------------------------------------------


def _weighted_two_means(feat: np.ndarray, y: np.ndarray, weights: np.ndarray):
    """Weighted Lloyd iterations seeded at the min-y and max-y records.

    Returns integer labels (1 for the cluster seeded at max y), or None when
    a cluster empties.
    """
    centers = np.stack([feat[np.argmin(y)], feat[np.argmax(y)]])
    labels = None
    for _ in range(KMEANS_MAX_ITER):
        d2 = ((feat[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
        new = np.argmin(d2, axis=1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for c in (0, 1):
            m = labels == c
            wm = weights[m].sum()
            if not m.any() or wm <= 0:
                return None
            centers[c] = (weights[m, None] * feat[m]).sum(0) / wm
    if labels.min() == labels.max():
        return None
    return labels


def _weighted_median_labels(y: np.ndarray, weights: np.ndarray) -> np.ndarray:
    order = np.argsort(y, kind="stable")
    cw = np.cumsum(weights[order])
    med = y[order][np.searchsorted(cw, 0.5 * cw[-1])]
    return (y > med).astype(int)


def fit_linear_svm(u: np.ndarray, labels: np.ndarray, weights: np.ndarray,
                   C: float = SVM_C, max_iter: int = SVM_MAX_ITER) -> tuple[np.ndarray, float]:
    """Weighted soft-margin linear SVM by full-batch subgradient descent.

    Minimizes ``0.5 |w|^2 + C sum_i s_i max(0, 1 - t_i (w.u_i + b))`` with
    ``s_i`` the weights rescaled to mean one.  Starts from the separator
    through the midpoint of the weighted class means and keeps the best
    iterate.  Deterministic.
    """
    n = u.shape[0]
    t = np.where(labels > 0, 1.0, -1.0)
    s = weights * (n / weights.sum())
    pos, neg = t > 0, t < 0
    mp = (s[pos, None] * u[pos]).sum(0) / s[pos].sum()
    mn = (s[neg, None] * u[neg]).sum(0) / s[neg].sum()
    w = mp - mn
    nw = np.linalg.norm(w)
    if nw < 1e-12:
        w = np.zeros(u.shape[1])
        w[0] = 1.0
        nw = 1.0
    # scale so the class means sit on the unit margins
    w = w * (2.0 / nw**2) if nw > 0 else w
    b = -float(w @ (0.5 * (mp + mn)))

    # objective divided by C*n; same minimizer
    lam = 1.0 / (C * n)

    best = (np.inf, w, b)
    scale = max(1.0, np.linalg.norm(w))
    sn = s / n
    for it in range(1, max_iter + 2):
        # one margin computation serves both the objective of the current
        # iterate and its subgradient
        m = t * (u @ w + b)
        slack = 1.0 - m
        act = slack > 0.0
        val = 0.5 * lam * (w @ w) + sn[act] @ slack[act]
        if val < best[0]:
            best = (val, w, b)
        if it > max_iter:
            break
        coef = sn[act] * t[act]
        gw = lam * w - coef @ u[act]
        gb = -coef.sum()
        gnorm = np.sqrt(gw @ gw + gb * gb)
        if gnorm < 1e-12:
            break
        step = 0.5 * scale / (np.sqrt(it) * gnorm)
        w = w - step * gw
        b = b - step * gb
    return best[1], float(best[2])


def learn_latent_action(u: np.ndarray, y: np.ndarray, weights: np.ndarray) -> Hyperplane | None:
    """Learn a good/bad separator for one node; None if unsplittable.

    Coordinates are min-max scaled over the node before clustering and
    classification (so deep, small nodes are not swamped by the margin
    penalty); the returned hyperplane is expressed in the caller's coordinates.
    """
    u = np.asarray(u, dtype=float)
    y = np.asarray(y, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if u.shape[0] < 2 or np.ptp(y) <= 0:
        return None
    lo = u.min(0)
    span = np.ptp(u, axis=0)
    span = np.where(span > 0, span, 1.0)
    z = (u - lo) / span
    ys = (y - y.min()) / np.ptp(y)
    labels = _weighted_two_means(np.hstack([z, ys[:, None]]), y, weights)
    if labels is None:
        labels = _weighted_median_labels(y, weights)
        if labels.min() == labels.max():
            return None
    else:
        # the good cluster is the one with the higher weighted mean y
        m1 = np.average(y[labels == 1], weights=weights[labels == 1])
        m0 = np.average(y[labels == 0], weights=weights[labels == 0])
        if m0 > m1:
            labels = 1 - labels
    w, b = fit_linear_svm(z, labels, weights)
    side = z @ w + b >= 0.0
    if side.all() or not side.any():
        # a heavily imbalanced, non-separable labeling can make "everything
        # on one side" the hinge optimum; retry with equal class mass
        bal = np.where(labels > 0, 0.5 / weights[labels > 0].sum(), 0.5 / weights[labels <= 0].sum())
        w, b = fit_linear_svm(z, labels, weights * bal)
    w_u = w / span
    if not np.linalg.norm(w_u) > 0:
        return None
    return Hyperplane(w_u, float(b - w_u @ lo))


# -- tree -------------------------------------------------------------------


@dataclass
class TreeNode:
    id: int
    indices: np.ndarray
    depth: int
    parent: int | None = None
    separator: Hyperplane | None = None
    good: int | None = None
    bad: int | None = None
    unsplittable: bool = False
    # additive sufficient statistics over the node's records
    count: int = 0
    sum_y: float = 0.0
    sum_inv_rho: float = 0.0
    sum_y_inv_rho: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return self.separator is None

    @property
    def n(self) -> int:
        return self.count

    @property
    def mean_y(self) -> float:
        return self.sum_y / self.count

    @property
    def weighted_mean_y(self) -> float:
        """Inverse-density weighted mean of y over the node."""
        return self.sum_y_inv_rho / self.sum_inv_rho

    @property
    def mean_density(self) -> float:
        """Weighted mean density; equals the harmonic mean of rho."""
        return self.count / self.sum_inv_rho

    def _set_stats(self, y: np.ndarray, rho: np.ndarray) -> None:
        inv = 1.0 / rho
        self.count = int(y.size)
        self.sum_y = float(y.sum())
        self.sum_inv_rho = float(inv.sum())
        self.sum_y_inv_rho = float((y * inv).sum())

    def _add_stats(self, y: np.ndarray, rho: np.ndarray) -> None:
        inv = 1.0 / rho
        self.count += int(y.size)
        self.sum_y += float(y.sum())
        self.sum_inv_rho += float(inv.sum())
        self.sum_y_inv_rho += float((y * inv).sum())


class PartitionTree:
    """Recursive latent-action partition over normalized coordinates."""

    def __init__(self, dim: int):
        self.dim = dim
        self.nodes: list[TreeNode] = []
        self._paths: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}

    @property
    def root(self) -> TreeNode:
        return self.nodes[0]

    @property
    def leaves(self) -> list[int]:
        return [nd.id for nd in self.nodes if nd.is_leaf]

    def _new_node(self, indices, depth, parent) -> TreeNode:
        node = TreeNode(len(self.nodes), np.asarray(indices, dtype=np.int64), depth, parent)
        self.nodes.append(node)
        return node

    def path_constraints(self, leaf_id: int):
        """Stacked ``(W, b, good)`` along the root-to-leaf path."""
        if leaf_id not in self._paths:
            ws, bs, goods = [], [], []
            node = self.nodes[leaf_id]
            while node.parent is not None:
                par = self.nodes[node.parent]
                ws.append(par.separator.w)
                bs.append(par.separator.b)
                goods.append(par.good == node.id)
                node = par
            W = np.array(ws).reshape(len(ws), self.dim)
            self._paths[leaf_id] = (W, np.array(bs, dtype=float), np.array(goods, dtype=bool))
        return self._paths[leaf_id]

    def member(self, leaf_id: int, u) -> np.ndarray:
        """Boolean membership of normalized points in a leaf."""
        u = np.atleast_2d(np.asarray(u, dtype=float))
        W, b, good = self.path_constraints(leaf_id)
        if W.shape[0] == 0:
            return np.ones(u.shape[0], dtype=bool)
        v = u @ W.T + b
        return np.all(np.where(good, v >= 0.0, v < 0.0), axis=1)

    def route(self, u) -> np.ndarray:
        """Leaf id for each normalized point."""
        u = np.atleast_2d(np.asarray(u, dtype=float))
        out = np.empty(u.shape[0], dtype=np.int64)
        stack = [(0, np.arange(u.shape[0]))]
        while stack:
            nid, idx = stack.pop()
            node = self.nodes[nid]
            if node.is_leaf:
                out[idx] = nid
                continue
            g = node.separator.good_side(u[idx])
            stack.append((node.good, idx[g]))
            stack.append((node.bad, idx[~g]))
        return out

    def refresh_stats(self, y: np.ndarray, rho: np.ndarray) -> None:
        """Recompute every node's statistics from its index set."""
        for node in self.nodes:
            node._set_stats(y[node.indices], rho[node.indices])

    def backpropagate(self, new_indices, u: np.ndarray, y: np.ndarray, rho: np.ndarray) -> np.ndarray:
        """Route new records to leaves and update the path statistics.

        ``u``, ``y`` and ``rho`` are full dataset arrays; ``new_indices``
        selects the appended rows.  Separators are left untouched.
        """
        new_indices = np.asarray(new_indices, dtype=np.int64)
        if new_indices.size == 0:
            return np.empty(0, dtype=np.int64)
        leaves = self.route(u[new_indices])
        for leaf in np.unique(leaves):
            idx = new_indices[leaves == leaf]
            nid = int(leaf)
            while nid is not None:
                node = self.nodes[nid]
                node.indices = np.concatenate([node.indices, idx])
                node._add_stats(y[idx], rho[idx])
                nid = node.parent
        return leaves

    def to_dict(self) -> dict:
        rows = []
        for nd in self.nodes:
            rows.append({
                "id": nd.id,
                "parent": nd.parent,
                "depth": nd.depth,
                "good": nd.good,
                "bad": nd.bad,
                "w": None if nd.separator is None else nd.separator.w.tolist(),
                "b": None if nd.separator is None else nd.separator.b,
                "n": nd.count,
                "weighted_mean_y": nd.weighted_mean_y if nd.count else None,
                "mean_density": nd.mean_density if nd.count else None,
                "unsplittable": nd.unsplittable,
            })
        return {"dim": self.dim, "nodes": rows}

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)


def treeify(u: np.ndarray, y: np.ndarray, rho: np.ndarray, leafsize: int, max_depth: int,
            weighted: bool = True) -> PartitionTree:
    """Build the partition tree over all records.

    ``weighted=False`` gives every record the same weight when learning
    separators (the unweighted predecessor behavior); node statistics are
    always kept with the density weights.
    """
    u = np.asarray(u, dtype=float)
    y = np.asarray(y, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if y.size == 0:
        raise ValueError("cannot treeify an empty dataset")
    tree = PartitionTree(u.shape[1])
    root = tree._new_node(np.arange(y.size), 0, None)
    queue = [root]
    while queue:
        node = queue.pop(0)
        idx = node.indices
        node._set_stats(y[idx], rho[idx])
        if idx.size < leafsize or node.depth >= max_depth:
            continue
        wts = inverse_density_weights(rho[idx]) if weighted else np.full(idx.size, 1.0 / idx.size)
        hp = learn_latent_action(u[idx], y[idx], wts)
        if hp is None:
            node.unsplittable = True
            continue
        g = hp.good_side(u[idx])
        if g.all() or not g.any():
            node.unsplittable = True
            continue
        gi, bi = idx[g], idx[~g]
        if _wmean(y[gi], rho[gi]) < _wmean(y[bi], rho[bi]):
            hp = Hyperplane(-hp.w, -hp.b)
            g = hp.good_side(u[idx])
            if g.all() or not g.any():
                node.unsplittable = True
                continue
            gi, bi = idx[g], idx[~g]
        node.separator = hp
        good = tree._new_node(gi, node.depth + 1, node.id)
        bad = tree._new_node(bi, node.depth + 1, node.id)
        node.good, node.bad = good.id, bad.id
        queue.extend([good, bad])
    return tree


def _wmean(y, rho) -> float:
    inv = 1.0 / rho
    return float((y * inv).sum() / inv.sum())


def leaf_membership(tree: PartitionTree, leaf_id: int, x) -> bool | np.ndarray:
    res = tree.member(leaf_id, x)
    return bool(res[0]) if np.ndim(x) == 1 else res


def backpropagate(tree: PartitionTree, new_indices, u, y, rho) -> np.ndarray:
    return tree.backpropagate(new_indices, u, y, rho)
