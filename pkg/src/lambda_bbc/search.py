"""Campaign engines: LAMBDA, its predecessor mode, and the RS/Sobol baselines.

A campaign is driven through ``ask``/``tell``: ``ask`` returns the next batch
of raw-coordinate points and ``tell`` hands back their objective values.
``run_campaign`` closes the loop for an in-process objective.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Generator

import numpy as np

from .density import build_index, default_k
from .domain import BudgetState, CampaignError, Dataset, SearchSpace
from .partition import PartitionTree, treeify
from .samplers import TrustRegionConfig, expand_candidates_around, reject_sample, trust_region_campaign
from .selection import BeamSelection, select_beam
from .sobol import SobolStream

log = logging.getLogger(__name__)

ALGORITHMS = ("lambda", "lambda-predecessor-mode", "random", "sobol")
LOCAL_SAMPLERS = ("reject-sobol", "trust-region")

# engine generators yield normalized batches and receive their y values
Engine = Generator[np.ndarray, np.ndarray, None]


@dataclass
class SearchSettings:
    """Algorithm knobs of one campaign (objective-independent)."""

    algorithm: str = "lambda"
    budget: int = 5000
    seed: int = 0
    c_p: float = 1.0
    leafsize: int = 10
    depth: int = 8
    init_samples: int = 256
    beam_width: int = 2
    selections_per_treeification: int = 50
    samples_per_selection: int = 1
    local_sampler: str = "reject-sobol"
    density_k: int | None = None
    rebuild_interval: int | None = None
    scramble: bool = True
    local_budget: int = 200
    exploration_scale: float | str = "auto"
    trust_region: TrustRegionConfig = field(default_factory=TrustRegionConfig)

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        if self.local_sampler not in LOCAL_SAMPLERS:
            raise ValueError(f"unknown local sampler {self.local_sampler!r}; choose from {LOCAL_SAMPLERS}")
        if self.budget < 0:
            raise ValueError("budget must be non-negative")
        if self.algorithm.startswith("lambda") and self.budget < self.init_samples:
            raise ValueError("budget must be at least init_samples")
        if self.beam_width < 1 or self.samples_per_selection < 1 or self.selections_per_treeification < 1:
            raise ValueError("beam_width, samples_per_selection and selections_per_treeification must be >= 1")
        if self.init_samples < 1:
            raise ValueError("init_samples must be >= 1")
        if isinstance(self.exploration_scale, str):
            if self.exploration_scale not in ("auto", "init-std", "data-std"):
                raise ValueError("exploration_scale must be a positive number, 'auto', 'init-std' or 'data-std'")
        elif not self.exploration_scale > 0:
            raise ValueError("exploration_scale must be positive")

    @property
    def predecessor(self) -> bool:
        return self.algorithm == "lambda-predecessor-mode"

    @property
    def scale_mode(self) -> float | str:
        """Resolved exploration scale: "auto" is data-std for LAMBDA and 1 for
        predecessor mode, whose UCB_1 term is used in objective units as in
        the original method."""
        if self.exploration_scale == "auto":
            return 1.0 if self.predecessor else "data-std"
        return self.exploration_scale

    @property
    def treeify_every(self) -> int:
        """Evaluations between treeifications."""
        return self.selections_per_treeification * self.beam_width * self.samples_per_selection


@dataclass
class RoundTrace:
    """What one selection round did (kept for diagnostics and tests)."""

    evaluations: int
    selection: BeamSelection
    tree_nodes: int


class _LambdaState:
    """Tree, densities and counters of a running LAMBDA engine."""

    def __init__(self, s: SearchSettings, dim: int):
        self.s = s
        self.dim = dim
        self.k = s.density_k if s.density_k is not None else default_k(dim)
        self.tree: PartitionTree | None = None
        self.rho = np.empty(0)
        self.density = None
        self.y_scale = 1.0
        self.treeifications = 0
        self.trace: list[RoundTrace] = []


class Campaign:
    """Ask/tell driver around an engine generator.

    Parameters
    ----------
    space : SearchSpace
        Raw search box; engines work in its normalized coordinates.
    settings : SearchSettings
    on_treeify : callable, optional
        Called with ``(tree, n_records)`` after every treeification.
    on_round : callable, optional
        Called with each ``RoundTrace``.
    """

    def __init__(self, space: SearchSpace, settings: SearchSettings,
                 on_treeify: Callable | None = None, on_round: Callable | None = None):
        self.space = space
        self.settings = settings
        self.budget = BudgetState(settings.budget)
        self.data = Dataset(space, capacity=max(settings.budget, 1))
        self.rng = np.random.default_rng(settings.seed)
        seed = settings.seed if settings.scramble else None
        self.init_sobol = SobolStream(space.dim, seed=seed)
        # local proposals use their own stream so the init sequence is unaffected
        local_seed = int(self.rng.integers(2**31)) if settings.scramble else None
        self.local_sobol = SobolStream(space.dim, seed=local_seed)
        self.on_treeify = on_treeify
        self.on_round = on_round
        self.state = _LambdaState(settings, space.dim)
        self._engine = self._make_engine()
        self._batch: np.ndarray | None = None  # current engine batch (raw)
        self._told: list[float] = []
        self._out = 0  # size of the handed-out, not yet told slice
        self._first = True
        self._done = False

    # -- protocol ----------------------------------------------------------

    @property
    def done(self) -> bool:
        return self._done

    @property
    def awaiting_tell(self) -> bool:
        return self._out > 0

    def _advance(self) -> bool:
        """Pull the next engine batch; False once the engine is exhausted."""
        try:
            if self._first:
                u = next(self._engine)
            else:
                u = self._engine.send(np.asarray(self._told, dtype=float))
        except StopIteration:
            self._done = True
            return False
        self._first = False
        u = np.atleast_2d(u)
        if u.shape[0] > self.budget.remaining:
            raise AssertionError("engine asked beyond the budget")
        self._batch = self.space.denormalize(u)
        self._told = []
        return True

    def ask(self, max_points: int | None = None) -> np.ndarray:
        """Next raw-coordinate points; empty once the campaign has finished.

        With ``max_points`` the current internal batch is handed out in
        slices; each slice must be told before the next ask.
        """
        if self._out:
            raise RuntimeError("ask called twice without tell")
        if self._done:
            return np.empty((0, self.space.dim))
        if self._batch is None or len(self._told) == self._batch.shape[0]:
            if not self._advance():
                return np.empty((0, self.space.dim))
        head = len(self._told)
        rest = self._batch.shape[0] - head
        self._out = rest if max_points is None else max(1, min(int(max_points), rest))
        return self._batch[head: head + self._out].copy()

    @property
    def outstanding(self) -> np.ndarray:
        """Points handed out by the last ask and not yet told."""
        head = len(self._told)
        return self._batch[head: head + self._out].copy() if self._out else np.empty((0, self.space.dim))

    def tell(self, y, wall_ms=None) -> None:
        if not self._out:
            raise RuntimeError("tell called without a pending ask")
        y = np.asarray(y, dtype=float).ravel()
        if y.size != self._out:
            raise ValueError(f"expected {self._out} values, got {y.size}")
        self.budget.consume(y.size)
        self.data.extend(self.outstanding, y, wall_ms)
        self._told.extend(y.tolist())
        self._out = 0

    def record_partial(self, y, wall_ms=None) -> None:
        """Keep the evaluated head of the outstanding points and stop the campaign."""
        if not self._out:
            raise RuntimeError("no pending batch")
        y = np.asarray(y, dtype=float).ravel()
        head = self.outstanding[: y.size]
        self._out = 0
        self._done = True
        if y.size:
            self.budget.consume(y.size)
            self.data.extend(head, y, wall_ms)

    # -- engines -------------------------------------------------------------

    def _make_engine(self) -> Engine:
        algo = self.settings.algorithm
        if algo == "random":
            return self._random_engine()
        if algo == "sobol":
            return self._sobol_engine()
        return self._lambda_engine()

    def _random_engine(self) -> Engine:
        while self.budget.remaining > 0:
            n = min(self.budget.remaining, 256)
            yield self.rng.random((n, self.space.dim))

    def _sobol_engine(self) -> Engine:
        while self.budget.remaining > 0:
            n = min(self.budget.remaining, 256)
            yield self.init_sobol.next(n)

    def _refresh_density(self) -> None:
        st = self.state
        u = self.data.u
        if self.settings.predecessor:
            st.rho = np.ones(len(self.data))
            return
        st.density = build_index(u, st.k)
        st.rho = st.density.density_at(u)

    def _add_density(self, start: int) -> None:
        """Extend ``rho`` with densities of the records appended since ``start``."""
        st = self.state
        new_u = self.data.u[start:]
        if self.settings.predecessor:
            add = np.ones(new_u.shape[0])
        else:
            st.density.add(new_u)
            add = st.density.density_at(new_u)
        st.rho = np.concatenate([st.rho, add])

    def _treeify(self) -> None:
        st = self.state
        s = self.settings
        self._refresh_density()
        if self.settings.scale_mode == "data-std":
            st.y_scale = self._exploration_scale()
        st.tree = treeify(self.data.u, self.data.y, st.rho, s.leafsize, s.depth,
                          weighted=not s.predecessor)
        st.treeifications += 1
        if self.on_treeify is not None:
            self.on_treeify(st.tree, len(self.data))

    def _lambda_engine(self) -> Engine:
        s = self.settings
        st = self.state
        yield self.init_sobol.next(s.init_samples)
        st.y_scale = self._exploration_scale()
        since_tree = s.treeify_every  # force a treeification first
        while self.budget.remaining > 0:
            if since_tree >= s.treeify_every:
                self._treeify()
                since_tree = 0
            elif (s.rebuild_interval and not s.predecessor
                  and st.density.staleness >= s.rebuild_interval):
                self._refresh_density()
                st.tree.refresh_stats(self.data.y, st.rho)
            mode = "one" if s.predecessor else "rho"
            width = 1 if s.predecessor else s.beam_width
            sel = select_beam(st.tree, s.c_p * st.y_scale, width, mode)
            start = len(self.data)
            for leaf in sel.leaves:
                if self.budget.remaining <= 0:
                    break
                if s.local_sampler == "trust-region":
                    yield from self._trust_region(leaf)
                else:
                    pts = self._reject(leaf, min(s.samples_per_selection, self.budget.remaining))
                    if pts.shape[0]:
                        yield pts
            n_new = len(self.data) - start
            if n_new == 0:
                # every selected leaf is exhausted; fall back to a global draw
                yield self.init_sobol.next(min(s.samples_per_selection, self.budget.remaining))
                n_new = len(self.data) - start
            new_idx = np.arange(start, len(self.data))
            self._add_density(start)
            st.tree.backpropagate(new_idx, self.data.u, self.data.y, st.rho)
            since_tree += n_new
            trace = RoundTrace(n_new, sel, len(st.tree.nodes))
            st.trace.append(trace)
            if self.on_round is not None:
                self.on_round(trace)

    def _exploration_scale(self) -> float:
        """Objective units for the exploration term.

        Exploration terms are unit-free while the exploitation term is in
        objective units; scaling by the spread of the observed values makes
        ``c_p`` comparable across objectives.
        """
        mode = self.settings.scale_mode
        if not isinstance(mode, str):
            return float(mode)
        sd = float(np.std(self.data.y))
        return sd if sd > 0 and np.isfinite(sd) else 1.0

    def _reject(self, leaf: int, n: int) -> np.ndarray:
        st = self.state
        res = reject_sample(st.tree, leaf, n, self.local_sobol)
        pts = res.points
        if res.thin:
            idx = st.tree.nodes[leaf].indices
            anchors = self.data.u[idx]
            extra = expand_candidates_around(st.tree, leaf, anchors, 8, self.local_sobol)
            need = n - pts.shape[0]
            if extra.shape[0]:
                pick = self.rng.choice(extra.shape[0], size=min(need, extra.shape[0]), replace=False)
                pts = np.vstack([pts, extra[np.sort(pick)]])
        return pts

    def _trust_region(self, leaf: int) -> Engine:
        st = self.state
        s = self.settings
        idx = st.tree.nodes[leaf].indices
        cap = min(s.local_budget, self.budget.remaining)
        history = (self.data.u.copy(), self.data.y.copy()) if s.trust_region.gp_scope == "global" else None
        gen = trust_region_campaign(st.tree, leaf, self.data.u[idx], self.data.y[idx], cap,
                                    self.rng, self.local_sobol, s.trust_region, history)
        try:
            batch = next(gen)
            while True:
                y = yield batch
                batch = gen.send(y)
        except StopIteration:
            return


def run_campaign(objective: Callable[[np.ndarray], float], space: SearchSpace,
                 settings: SearchSettings, timing: bool = False,
                 on_batch: Callable[[Dataset, int], None] | None = None, **hooks) -> Campaign:
    """Drive a campaign to completion with an in-process raw-space objective.

    ``on_batch(dataset, start)`` is called after every told batch with the
    index of its first record.  On an objective failure the records
    evaluated so far stay in ``campaign.data`` and a ``CampaignError`` is
    raised with the campaign attached as ``err.campaign``.
    """
    camp = Campaign(space, settings, **hooks)
    while True:
        X = camp.ask()
        if X.shape[0] == 0:
            break
        start = len(camp.data)
        ys, ms = [], []
        for x in X:
            t0 = time.perf_counter()
            try:
                ys.append(float(objective(x)))
            except Exception as exc:  # noqa: BLE001 - any evaluator failure aborts the run
                camp.record_partial(ys, ms if timing else None)
                if on_batch is not None and len(camp.data) > start:
                    on_batch(camp.data, start)
                err = CampaignError(x, exc)
                err.campaign = camp
                raise err from exc
            ms.append((time.perf_counter() - t0) * 1e3)
        camp.tell(ys, ms if timing else None)
        if on_batch is not None:
            on_batch(camp.data, start)
    return camp
