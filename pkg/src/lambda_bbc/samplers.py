"""Point generators restricted to one leaf of a partition tree.

Everything here works in normalized coordinates.  Samplers that need
objective values (the trust-region sampler) are generators: they yield a
batch of points and expect the batch's objective values back via ``send``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Generator

import numpy as np
from scipy.stats import qmc

from .partition import PartitionTree
from .sobol import SobolStream
from .surrogate import IllConditioned, SurrogateModel, surrogate_thompson_select

log = logging.getLogger(__name__)

EXPAND_START_EDGE = 1.0 / 64
MIN_BOX_WIDTH = 1e-3

# yields a (m, d) batch of normalized points, receives their y values
LocalSampler = Generator[np.ndarray, np.ndarray, "tuple[np.ndarray, np.ndarray]"]


@dataclass
class Boundary:
    lo: np.ndarray
    hi: np.ndarray
    members: np.ndarray
    history: list = field(default_factory=list)

    @property
    def width(self) -> np.ndarray:
        return self.hi - self.lo


@dataclass
class RejectResult:
    points: np.ndarray
    proposals: int
    thin: bool = False


def reject_sample(tree: PartitionTree, leaf_id: int, n: int, proposal: SobolStream | np.random.Generator,
                  max_tries: int = 1 << 14, block: int = 64) -> RejectResult:
    """Draw ``n`` leaf members by filtering whole-box proposals.

    Gives up once ``max_tries * n`` proposals have been spent, returning a
    partial batch flagged ``thin``.
    """
    dim = tree.dim
    got: list[np.ndarray] = []
    have = 0
    spent = 0
    limit = max_tries * max(n, 1)
    while have < n and spent < limit:
        m = min(block, limit - spent)
        if isinstance(proposal, SobolStream):
            cand = proposal.next(m)
        else:
            cand = proposal.random((m, dim))
        spent += m
        inside = cand[tree.member(leaf_id, cand)]
        if inside.shape[0]:
            take = inside[: n - have]
            got.append(take)
            have += take.shape[0]
        block = min(block * 2, 1 << 16)
    pts = np.vstack(got) if got else np.empty((0, dim))
    thin = have < n
    if thin:
        log.debug("thin subspace: leaf %d accepted %d/%d after %d proposals", leaf_id, have, n, spent)
    return RejectResult(pts, spent, thin)


def _cube(center: np.ndarray, edge, lo=0.0, hi=1.0):
    half = 0.5 * np.asarray(edge, dtype=float)
    return np.maximum(center - half, lo), np.minimum(center + half, hi)


def expand_candidates_around(tree: PartitionTree, leaf_id: int, anchors, per_anchor: int,
                             sobol: SobolStream, box: tuple[np.ndarray, np.ndarray] | None = None) -> np.ndarray:
    """Candidates around each anchor from a cube grown until it leaves the leaf.

    The cube starts at edge 1/64 and doubles while a probe batch of
    ``2 * dim`` Sobol points stays entirely inside the leaf.  At the first
    edge with outsiders (or once the cube covers ``box``), ``per_anchor``
    points are drawn in that cube and only the insiders are kept.
    """
    anchors = np.atleast_2d(np.asarray(anchors, dtype=float))
    dim = tree.dim
    blo, bhi = (np.zeros(dim), np.ones(dim)) if box is None else box
    out = []
    for a in anchors:
        if not tree.member(leaf_id, a[None, :])[0]:
            log.warning("anchor %s is not in leaf %d; skipped", a.tolist(), leaf_id)
            continue
        edge = EXPAND_START_EDGE
        while True:
            lo, hi = _cube(a, edge, blo, bhi)
            probe = lo + sobol.next(2 * dim) * (hi - lo)
            covers = np.all(lo <= blo) and np.all(hi >= bhi)
            if covers or not tree.member(leaf_id, probe).all():
                break
            edge *= 2.0
        pts = lo + sobol.next(per_anchor) * (hi - lo)
        out.append(pts[tree.member(leaf_id, pts)])
    if not out:
        return np.empty((0, dim))
    cand = np.vstack(out)
    if cand.shape[0] == 0:
        return cand
    _, keep = np.unique(cand, axis=0, return_index=True)
    return cand[np.sort(keep)]


def approximate_boundary(tree: PartitionTree, leaf_id: int, leaf_u, sobol: SobolStream,
                         probes_per_point: int | None = None, max_iter: int = 30) -> Boundary:
    """Outer axis-aligned box of a leaf, grown from its records' bounding box.

    Each round probes with Sobol points in a box-sized cube around every
    outermost member; any member found outside the current box enlarges it.
    Stops when a round finds nothing new.
    """
    members = np.atleast_2d(np.asarray(leaf_u, dtype=float))
    dim = tree.dim
    if members.shape[0] == 0:
        raise ValueError("leaf has no records")
    m = probes_per_point or 4 * dim
    lo, hi = members.min(0), members.max(0)
    history = [(lo.copy(), hi.copy())]
    for _ in range(max_iter):
        ext = np.unique(np.concatenate([members.argmin(0), members.argmax(0)]))
        edge = np.maximum(hi - lo, 1.0 / 16)
        found = []
        for i in ext:
            clo, chi = _cube(members[i], edge)
            pts = clo + sobol.next(m) * (chi - clo)
            found.append(pts[tree.member(leaf_id, pts)])
        new = np.vstack(found)
        outside = new[np.any((new < lo) | (new > hi), axis=1)] if new.size else new
        if outside.shape[0] == 0:
            break
        members = np.vstack([members, outside])
        lo, hi = members.min(0), members.max(0)
        history.append((lo.copy(), hi.copy()))
    # floor the width around the center, staying inside the unit box
    short = hi - lo < MIN_BOX_WIDTH
    if short.any():
        c = 0.5 * (lo + hi)
        lo = np.where(short, np.clip(c - MIN_BOX_WIDTH / 2, 0.0, 1.0 - MIN_BOX_WIDTH), lo)
        hi = np.where(short, lo + MIN_BOX_WIDTH, hi)
    return Boundary(lo, hi, members, history)


@dataclass
class TrustRegionConfig:
    init_points: int = 30
    batch: int = 5
    length_init: float = 0.8
    success_tolerance: int = 3
    failure_tolerance: int | None = None  # None -> max(5, dim)
    min_halvings: int = 7
    n_candidates: int = 500
    max_train: int = 300
    gp_restarts: int = 3
    gp_scope: str = "subspace"  # or "global": train on the whole history

    def __post_init__(self):
        if self.gp_scope not in ("subspace", "global"):
            raise ValueError("gp_scope must be 'subspace' or 'global'")

    def fail_tol(self, dim: int) -> int:
        return self.failure_tolerance if self.failure_tolerance is not None else max(5, dim)


@dataclass
class TrustRegion:
    center: np.ndarray
    length: np.ndarray
    bound_lo: np.ndarray
    bound_hi: np.ndarray
    min_length: np.ndarray
    success_count: int = 0
    failure_count: int = 0
    history: list = field(default_factory=list)

    def box(self):
        lo = np.maximum(self.center - self.length / 2, self.bound_lo)
        hi = np.minimum(self.center + self.length / 2, self.bound_hi)
        return lo, hi

    @property
    def done(self) -> bool:
        return bool(np.all(self.length < self.min_length))


def _lhs_in_box(n, lo, hi, rng):
    eng = qmc.LatinHypercube(d=lo.size, seed=rng)
    return lo + eng.random(n) * (hi - lo)


def trust_region_campaign(tree: PartitionTree, leaf_id: int, leaf_u, leaf_y, budget: int,
                          rng: np.random.Generator, sobol: SobolStream,
                          cfg: TrustRegionConfig | None = None, history=None) -> LocalSampler:
    """Surrogate-guided trust-region search confined to one leaf.

    Generator: yields normalized batches and receives their objective values.
    Returns ``(u, y)`` of every point it evaluated.  The surrogate trains on
    the leaf records plus new points, or on ``history`` (a ``(u, y)`` pair,
    e.g. the whole dataset) plus new points when given.
    """
    cfg = cfg or TrustRegionConfig()
    dim = tree.dim
    leaf_u = np.atleast_2d(np.asarray(leaf_u, dtype=float)).reshape(-1, dim)
    leaf_y = np.asarray(leaf_y, dtype=float).ravel()
    got_u = np.empty((0, dim))
    got_y = np.empty(0)
    if budget <= 0:
        return got_u, got_y

    bound = approximate_boundary(tree, leaf_id, leaf_u, sobol)
    blo, bhi = bound.lo, bound.hi

    # (a) Latin-hypercube start inside the approximated boundary, leaf members only
    n_init = min(cfg.init_points, budget)
    init = np.empty((0, dim))
    for _ in range(20):
        if init.shape[0] >= n_init:
            break
        pts = _lhs_in_box(max(n_init, 8), blo, bhi, rng)
        init = np.vstack([init, pts[tree.member(leaf_id, pts)]])
    if init.shape[0] < n_init:
        extra = expand_candidates_around(tree, leaf_id, leaf_u, max(4, n_init), sobol)
        if extra.shape[0]:
            pick = rng.choice(extra.shape[0], size=min(n_init - init.shape[0], extra.shape[0]), replace=False)
            init = np.vstack([init, extra[np.sort(pick)]])
    init = init[:n_init]
    if init.shape[0] == 0:
        return got_u, got_y
    y0 = np.asarray((yield init), dtype=float)
    got_u, got_y = init, y0

    base_u, base_y = (leaf_u, leaf_y) if history is None else history
    data_u = np.vstack([np.asarray(base_u, dtype=float).reshape(-1, dim), got_u])
    data_y = np.concatenate([np.asarray(base_y, dtype=float).ravel(), got_y])

    # (b) center on the incumbent, length relative to the boundary
    best = int(np.argmax(data_y))
    width = bhi - blo
    tr = TrustRegion(center=data_u[best].copy(), length=cfg.length_init * width,
                     bound_lo=blo, bound_hi=bhi,
                     min_length=cfg.length_init * width / 2**cfg.min_halvings)
    best_y = float(data_y[best])
    fail_tol = cfg.fail_tol(dim)

    # (c) surrogate-guided batches
    while got_y.size < budget and not tr.done:
        lo, hi = tr.box()
        in_tr = np.all((data_u >= lo) & (data_u <= hi), axis=1)
        tu, ty = data_u[in_tr], data_y[in_tr]
        if tu.shape[0] > cfg.max_train:
            near = np.argsort(((tu - tr.center) ** 2).sum(1), kind="stable")[: cfg.max_train]
            tu, ty = tu[near], ty[near]
        cand = lo + sobol.next(cfg.n_candidates) * (hi - lo)
        cand = cand[tree.member(leaf_id, cand)]
        if cand.shape[0] < cfg.batch:
            anchors = tu if tu.shape[0] else tr.center[None, :]
            more = expand_candidates_around(tree, leaf_id, anchors[:32], 16, sobol, box=(lo, hi))
            cand = np.vstack([cand, more]) if more.size else cand
        if cand.shape[0] == 0:
            break
        q = min(cfg.batch, budget - got_y.size)
        if tu.shape[0] >= 2 and np.ptp(ty) > 0:
            try:
                model = SurrogateModel().fit(tu, ty, rng=rng, restarts=cfg.gp_restarts)
                pick = surrogate_thompson_select(model, cand, q, rng)
            except IllConditioned:
                pick = cand[rng.choice(cand.shape[0], size=min(q, cand.shape[0]), replace=False)]
        else:
            pick = cand[rng.choice(cand.shape[0], size=min(q, cand.shape[0]), replace=False)]
        yb = np.asarray((yield pick), dtype=float)
        got_u = np.vstack([got_u, pick])
        got_y = np.concatenate([got_y, yb])
        data_u = np.vstack([data_u, pick])
        data_y = np.concatenate([data_y, yb])

        if yb.max() > best_y + 1e-3 * abs(best_y):
            tr.success_count += 1
            tr.failure_count = 0
        else:
            tr.failure_count += 1
            tr.success_count = 0
        if yb.max() > best_y:
            best_y = float(yb.max())
            tr.center = pick[int(np.argmax(yb))].copy()
        if tr.success_count >= cfg.success_tolerance:
            tr.length = np.minimum(2.0 * tr.length, width)
            tr.success_count = 0
        elif tr.failure_count >= fail_tol:
            tr.length = tr.length / 2.0
            tr.failure_count = 0
        tr.history.append((tr.length.copy(), best_y))
    return got_u, got_y


def drive(gen: LocalSampler, objective) -> tuple[np.ndarray, np.ndarray]:
    """Run a local-sampler generator against a normalized-space objective."""
    try:
        batch = next(gen)
        while True:
            batch = gen.send(np.array([objective(p) for p in batch], dtype=float))
    except StopIteration as stop:
        return stop.value
