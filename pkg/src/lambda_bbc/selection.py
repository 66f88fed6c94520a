"""Leaf scoring and beam selection over the flattened partition tree."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Literal

import numpy as np

from .partition import PartitionTree, TreeNode, inverse_density_weights

ADAPT_FLOOR = 1.0 + 1e-9


@dataclass(frozen=True)
class UcbScore:
    leaf_id: int
    exploitation: float
    exploration: float

    @property
    def total(self) -> float:
        return self.exploitation + self.exploration


@dataclass(frozen=True)
class BeamSelection:
    leaves: tuple[int, ...]
    scores: tuple[UcbScore, ...] = ()

    def __iter__(self):
        return iter(self.leaves)

    def __len__(self):
        return len(self.leaves)


def node_mean_density(rho) -> float:
    """Inverse-density weighted mean of ``rho`` over one node's records."""
    rho = np.asarray(rho, dtype=float)
    return float((inverse_density_weights(rho) * rho).sum())


def exploitation_rho(y, rho) -> float:
    y = np.asarray(y, dtype=float)
    return float((inverse_density_weights(rho) * y).sum())


def adapt_base(parent_density: float, child_densities: Iterable[float]) -> float:
    adapt = max(child_densities) / parent_density
    return max(adapt, ADAPT_FLOOR)


def ucb_rho_terms(parent_density: float, child_density: float, child_value: float,
                  c_p: float, adapt: float) -> UcbScore:
    """Density-adaptive score given precomputed node statistics.

    ``adapt`` is the logarithm base; pass ``1.0`` for the all-equal limit.
    """
    if adapt <= 1.0:
        exploration = 0.0
    else:
        exploration = c_p * math.log(parent_density / child_density) / math.log(adapt)
    return UcbScore(-1, child_value, exploration)


def ucb_rho(parent: TreeNode, child: TreeNode, c_p: float, sibling_densities) -> UcbScore:
    dens = list(sibling_densities)
    # every child equally dense: the logarithm base degenerates to one
    adapt = 1.0 if max(dens) == min(dens) else adapt_base(parent.mean_density, dens)
    s = ucb_rho_terms(parent.mean_density, child.mean_density, child.weighted_mean_y, c_p, adapt)
    return UcbScore(child.id, s.exploitation, s.exploration)


def ucb_one_terms(n_parent: int, n_child: int, sum_y: float, c_p: float) -> UcbScore:
    if n_child == 0:
        return UcbScore(-1, 0.0, math.inf)
    exploitation = sum_y / n_child
    exploration = 2.0 * c_p * math.sqrt(2.0 * math.log(n_parent) / n_child)
    return UcbScore(-1, exploitation, exploration)


def ucb_one(parent: TreeNode, child: TreeNode, c_p: float) -> UcbScore:
    s = ucb_one_terms(parent.n, child.n, child.sum_y, c_p)
    return UcbScore(child.id, s.exploitation, s.exploration)


def score_leaves(tree: PartitionTree, c_p: float, mode: Literal["rho", "one"] = "rho") -> list[UcbScore]:
    """Score every leaf against the root."""
    root = tree.root
    leaves = [tree.nodes[i] for i in tree.leaves]
    if mode == "one":
        return [ucb_one(root, lf, c_p) for lf in leaves]
    if mode != "rho":
        raise ValueError(f"unknown UCB mode {mode!r}")
    for lf in leaves:
        assert lf.count > 0, "leaves are never empty"
    dens = [lf.mean_density for lf in leaves]
    return [ucb_rho(root, lf, c_p, dens) for lf in leaves]


def rank_scores(scores: list[UcbScore], width: int) -> BeamSelection:
    ordered = sorted(scores, key=lambda s: (-s.total, s.leaf_id))
    top = ordered[: max(1, width)]
    return BeamSelection(tuple(s.leaf_id for s in top), tuple(top))


def select_beam(tree: PartitionTree, c_p: float, beam_width: int,
                mode: Literal["rho", "one"] = "rho") -> BeamSelection:
    return rank_scores(score_leaves(tree, c_p, mode), beam_width)


class ScoreLog:
    """CSV sink for per-round leaf score tables."""

    header = ("round", "leaf_id", "exploitation", "exploration", "total")

    def __init__(self, path):
        self._fh = open(path, "w", newline="")
        self._w = csv.writer(self._fh)
        self._w.writerow(self.header)

    def write(self, round_no: int, scores: list[UcbScore]) -> None:
        for s in scores:
            self._w.writerow((round_no, s.leaf_id, repr(s.exploitation),
                              repr(s.exploration), repr(s.total)))

    def close(self) -> None:
        self._fh.close()
