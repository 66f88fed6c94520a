"""Benchmark objectives and the toy car-following scenario.

Every objective here is a maximization target: a point is critical when the
returned value exceeds the threshold ``delta`` of its problem definition.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .domain import DomainError, SearchSpace

SQRT2 = math.sqrt(2.0)


# --------------------------------------------------------------------- Holder

HOLDER_SPACE = SearchSpace([-10.0, -10.0], [10.0, 10.0])
HOLDER_DELTA = 18.0
HOLDER_MAX = 19.2085
HOLDER_CENTERS = np.array([[s1 * 8.05502, s2 * 9.66459] for s1 in (1, -1) for s2 in (1, -1)])


def holder_table(x) -> float | np.ndarray:
    """Absolute-value Holder-Table function; accepts a point or an (n, 2) batch."""
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    r = np.sqrt(x1 * x1 + x2 * x2)
    val = np.abs(np.sin(x1) * np.cos(x2) * np.exp(np.abs(1.0 - r / math.pi)))
    return float(val) if val.ndim == 0 else val


# -------------------------------------------------------------------- Ripples

@dataclass(frozen=True)
class RipplesParams:
    dim: int = 2
    bias: float = 3.0
    sigma: float = 1.0
    k: float = 0.1
    omega: float = 2.0 * SQRT2

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        m = self.omega / SQRT2
        if m <= 0 or abs(m - round(m)) > 1e-9:
            raise ValueError(f"omega must be a positive integer multiple of sqrt(2), got {self.omega}")

    def space(self) -> SearchSpace:
        return SearchSpace(np.full(self.dim, -5.0), np.full(self.dim, 5.0))

    def centers(self) -> np.ndarray:
        """Modality centers ``-bias * e_i``."""
        return -self.bias * np.eye(self.dim)


RIPPLES_DELTA = 0.7


def ripples_term(r, params: RipplesParams = RipplesParams()):
    """Per-modality contribution ``g(r)`` at distance ``r`` from a center."""
    r = np.asarray(r, dtype=float)
    return (np.exp(-r * r / (2.0 * params.sigma ** 2))
            + params.k * np.cos(params.omega * r) - params.k)


def ripples(x, params: RipplesParams = RipplesParams()):
    """Sum of ``dim`` radial ripple bumps; accepts a point or an (n, dim) batch."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != params.dim:
        raise ValueError(f"expected {params.dim} coordinates, got {x.shape[-1]}")
    # x'_i = ||x + bias * e_i||, expanded so no (n, dim, dim) tensor is needed
    sq = (x * x).sum(-1)[..., None]
    r2 = sq + 2.0 * params.bias * x + params.bias ** 2
    r = np.sqrt(np.maximum(r2, 0.0))
    val = ripples_term(r, params).sum(-1)
    return float(val) if val.ndim == 0 else val


# ------------------------------------------------------------------- Scenario

def ttc(s1: float, v0: float, v1: float) -> float:
    """Time to collision of a follower at ``v0`` behind a leader at ``v1``, gap ``s1``.

    A negative gap (overlap) gives 0. Without closing speed the result is +inf,
    including the tie ``v0 == v1``.
    """
    if s1 < 0:
        return 0.0
    if v0 > v1:
        return s1 / (v0 - v1)
    return math.inf


@dataclass(frozen=True)
class ScenarioParams:
    """Fixed parameters and search ranges of the cut-in/brake logical scenario."""

    v0: float = 30.0
    v1: float = 20.0
    s2: float = 50.0
    t_brake: float = 4.0
    s1_range: tuple[float, float] = (10.0, 110.0)
    v2_range: tuple[float, float] = (10.0, 30.0)

    def space(self) -> SearchSpace:
        return SearchSpace([self.s1_range[0], self.v2_range[0]],
                           [self.s1_range[1], self.v2_range[1]])


@dataclass(frozen=True)
class EgoModel:
    """Toy ego policy and kinematics constants.

    The ego cruises until its TTC to the braking lead vehicle drops to
    ``trigger``; after ``reaction_delay`` it brakes at ``a_brake``. While
    braking it checks whether a lane change is still needed (TTC to the lead
    at or below ``ttc_swerve``) and feasible (gap to the rear vehicle
    projected over ``lc_time`` exceeds ``min_gap``). During the lane change it
    keeps braking; afterwards it holds speed in the target lane.
    """

    dt: float = 0.02
    horizon: float = 15.0
    a_lead: float = 8.0
    trigger: float = 3.0
    reaction_delay: float = 0.75
    a_brake: float = 6.0
    ttc_swerve: float = 1.0
    lc_time: float = 2.0
    min_gap: float = 5.0


def simulate_min_ttc(s1: float, v2: float, params: ScenarioParams = ScenarioParams(),
                     ego: EgoModel = EgoModel()) -> float:
    """Minimum active-conflict TTC over one episode."""
    lo_s, hi_s = params.s1_range
    lo_v, hi_v = params.v2_range
    if not (lo_s <= s1 <= hi_s and lo_v <= v2 <= hi_v):
        raise DomainError(f"(s1={s1}, v2={v2}) outside scenario ranges")
    dt = ego.dt
    eps = 1e-9
    xe, ve = 0.0, params.v0
    xl, vl = float(s1), params.v1
    xr = -params.s2
    phase = "cruise"
    t_mark = 0.0
    lane = 0
    best = math.inf
    for step in range(int(round(ego.horizon / dt)) + 1):
        t = step * dt
        front = ttc(xl - xe, ve, vl)
        if lane == 0 and phase != "lane_change":
            active = front
        else:
            active = ttc(xe - xr, v2, ve)
        best = min(best, active)

        if phase == "cruise" and front <= ego.trigger:
            phase, t_mark = "react", t
        if phase == "react" and t - t_mark >= ego.reaction_delay - eps:
            phase = "brake"
        if phase == "brake" and front <= ego.ttc_swerve:
            if (xe - xr) + (ve - v2) * ego.lc_time > ego.min_gap:
                phase, t_mark = "lane_change", t
        if phase == "lane_change" and t - t_mark >= ego.lc_time - eps:
            phase, lane = "target_lane", 1

        a = -ego.a_brake if phase in ("brake", "lane_change") else 0.0
        al = -ego.a_lead if t >= params.t_brake else 0.0
        nv = max(ve + a * dt, 0.0)
        xe += 0.5 * (ve + nv) * dt
        ve = nv
        nl = max(vl + al * dt, 0.0)
        xl += 0.5 * (vl + nl) * dt
        vl = nl
        xr += v2 * dt
    return best


SCENARIO_DELTA = -0.5


def simulate_car_following(s1: float, v2: float, params: ScenarioParams = ScenarioParams(),
                           ego: EgoModel = EgoModel()) -> float:
    """Criticality ``-min TTC``; critical when above ``SCENARIO_DELTA``."""
    return -simulate_min_ttc(s1, v2, params, ego)


# ------------------------------------------------------------------- Registry

@dataclass
class Problem:
    """Objective bundled with its box, threshold and known modality centers."""

    name: str
    func: Callable[[np.ndarray], float]
    space: SearchSpace
    delta: float
    centers: np.ndarray | None = None
    params: dict = field(default_factory=dict)

    def __call__(self, x) -> float:
        return float(self.func(np.asarray(x, dtype=float)))

    def batch(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.array([self(x) for x in X])


def make_problem(name: str, **kwargs) -> Problem:
    """Build a named built-in problem; ``kwargs`` are objective parameters."""
    if name == "holder":
        if kwargs:
            raise ValueError(f"holder takes no parameters, got {sorted(kwargs)}")
        return Problem("holder", holder_table, HOLDER_SPACE, HOLDER_DELTA, HOLDER_CENTERS.copy())
    if name == "ripples":
        p = RipplesParams(**kwargs)
        return Problem("ripples", lambda x: ripples(x, p), p.space(), RIPPLES_DELTA,
                       p.centers(), asdict(p))
    if name == "scenario":
        ego = EgoModel(**kwargs)
        sp = ScenarioParams()

        def f(x):
            return simulate_car_following(float(x[0]), float(x[1]), sp, ego)
        return Problem("scenario", f, sp.space(), SCENARIO_DELTA, None, asdict(ego))
    raise ValueError(f"unknown objective {name!r}")
