"""Core problem types: search space, sample history, budget and evaluation."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

Objective = Callable[[np.ndarray], float]


class DomainError(ValueError):
    """A point or parameter lies outside its admissible domain."""


class BudgetExhausted(RuntimeError):
    def __init__(self, requested: int, remaining: int):
        super().__init__(
            f"requested {requested} evaluations but only {remaining} remain"
        )
        self.requested = requested
        self.remaining = remaining


class CampaignError(RuntimeError):
    """The objective failed on a specific point."""

    def __init__(self, point, cause: BaseException):
        super().__init__(f"objective failed at {list(np.asarray(point))}: {cause!r}")
        self.point = np.asarray(point, dtype=float)
        self.cause = cause


@dataclass(frozen=True)
class SearchSpace:
    """Axis-aligned box ``[lower, upper]`` in raw units."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.ndim != 1 or lo.shape != hi.shape or lo.size < 1:
            raise DomainError("lower and upper must be equal-length 1-d vectors")
        if not np.all(lo < hi):
            raise DomainError("every lower bound must be strictly below its upper bound")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def cube(cls, low: float, high: float, dim: int) -> "SearchSpace":
        return cls(np.full(dim, float(low)), np.full(dim, float(high)))

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lower) & (x <= self.upper), axis=-1)

    def normalize(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise DomainError(f"expected points of dimension {self.dim}, got {x.shape}")
        if not np.all(self.contains(x)):
            raise DomainError("point outside search space bounds")
        return (x - self.lower) / self.width

    def denormalize(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        x = self.lower + u * self.width
        # exact endpoints; affine round-off must not push points out of bounds
        return np.clip(x, self.lower, self.upper)

    def to_dict(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}


def normalize(space: SearchSpace, x) -> np.ndarray:
    return space.normalize(x)


def denormalize(space: SearchSpace, u) -> np.ndarray:
    return space.denormalize(u)


@dataclass(frozen=True)
class SampleRecord:
    x: np.ndarray
    y: float
    wall_ms: float = 0.0


class Dataset:
    """Append-only evaluation history, kept as growable numpy arrays.

    Row order is evaluation order; ``x`` is raw, ``u`` the normalized copy.
    """

    def __init__(self, space: SearchSpace, capacity: int = 1024):
        self.space = space
        self._x = np.empty((capacity, space.dim))
        self._u = np.empty((capacity, space.dim))
        self._y = np.empty(capacity)
        self._ms = np.empty(capacity)
        self._n = 0

    def __len__(self) -> int:
        return self._n

    def _grow(self, need: int):
        cap = self._y.size
        if self._n + need <= cap:
            return
        new_cap = max(2 * cap, self._n + need)
        for name in ("_x", "_u"):
            arr = np.empty((new_cap, self.space.dim))
            arr[: self._n] = getattr(self, name)[: self._n]
            setattr(self, name, arr)
        for name in ("_y", "_ms"):
            arr = np.empty(new_cap)
            arr[: self._n] = getattr(self, name)[: self._n]
            setattr(self, name, arr)

    def extend(self, x, y, wall_ms=None) -> None:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        if x.shape[0] != y.size:
            raise ValueError("x and y lengths differ")
        u = self.space.normalize(x)
        m = y.size
        self._grow(m)
        s = slice(self._n, self._n + m)
        self._x[s] = x
        self._u[s] = u
        self._y[s] = y
        self._ms[s] = 0.0 if wall_ms is None else wall_ms
        self._n += m

    def append(self, record: SampleRecord) -> None:
        self.extend(record.x[None, :], [record.y], [record.wall_ms])

    @property
    def x(self) -> np.ndarray:
        return self._x[: self._n]

    @property
    def u(self) -> np.ndarray:
        return self._u[: self._n]

    @property
    def y(self) -> np.ndarray:
        return self._y[: self._n]

    @property
    def wall_ms(self) -> np.ndarray:
        return self._ms[: self._n]

    def records(self) -> list[SampleRecord]:
        return [
            SampleRecord(self.x[i].copy(), float(self.y[i]), float(self.wall_ms[i]))
            for i in range(self._n)
        ]

    def prefix(self, n: int) -> "Dataset":
        out = Dataset(self.space, capacity=max(n, 1))
        if n:
            out.extend(self.x[:n], self.y[:n], self.wall_ms[:n])
        return out


@dataclass(frozen=True)
class BlackBoxInequality:
    """Criticality criterion ``objective(x) > delta`` (strict)."""

    objective: Objective
    delta: float

    def is_critical(self, y) -> np.ndarray:
        return np.asarray(y) > self.delta


@dataclass
class BudgetState:
    total: int
    used: int = 0

    def __post_init__(self):
        if self.total < 0 or not 0 <= self.used <= self.total:
            raise ValueError(f"invalid budget state used={self.used} total={self.total}")

    @property
    def remaining(self) -> int:
        return self.total - self.used

    def consume(self, n: int) -> None:
        if n > self.remaining:
            raise BudgetExhausted(n, self.remaining)
        self.used += n


def evaluate_batch(
    objective: Objective,
    points: Sequence,
    budget: BudgetState,
    space: SearchSpace | None = None,
) -> list[SampleRecord]:
    """Evaluate ``points`` in order, charging ``budget`` up front."""
    pts = [np.asarray(p, dtype=float) for p in points]
    if len(pts) > budget.remaining:
        raise BudgetExhausted(len(pts), budget.remaining)
    if space is not None:
        for p in pts:
            if not space.contains(p):
                raise DomainError(f"point {p.tolist()} outside search space")
    out = []
    for p in pts:
        t0 = time.perf_counter()
        try:
            y = float(objective(p))
        except Exception as exc:  # noqa: BLE001 - rewrapped with the point
            raise CampaignError(p, exc) from exc
        out.append(SampleRecord(p, y, (time.perf_counter() - t0) * 1e3))
    budget.consume(len(pts))
    return out
