"""Coverage scoring: regressor from a sample history, grid ground truth, F2."""

from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import LinearNDInterpolator
from scipy.spatial import QhullError, cKDTree

from .domain import Dataset, SearchSpace

log = logging.getLogger(__name__)

KNN_K = 8
KNN_POWER = 2.0


@dataclass(frozen=True)
class ValidationSet:
    points: np.ndarray
    truth: np.ndarray
    resolution: tuple[int, ...]
    delta: float

    def __len__(self) -> int:
        return self.truth.size

    @property
    def positive_fraction(self) -> float:
        return float(self.truth.mean())


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class CoverageReport:
    recall: float
    precision: float
    f2: float
    budget_used: int = 0
    counts: ConfusionCounts | None = None


def grid_points(space: SearchSpace, resolution) -> tuple[np.ndarray, tuple[int, ...]]:
    """Cartesian grid including both endpoints, last coordinate fastest."""
    res = np.broadcast_to(np.asarray(resolution, dtype=int), (space.dim,))
    if np.any(res < 2):
        raise ValueError("resolution must be >= 2 per dimension")
    axes = [np.linspace(lo, hi, r) for lo, hi, r in zip(space.lower, space.upper, res)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1), tuple(int(r) for r in res)


def build_validation_set(space: SearchSpace, resolution, delta: float,
                         objective: Callable | None = None, values=None) -> ValidationSet:
    """Grid with strict ``f > delta`` labels from an objective or given values.

    ``values`` (e.g. from a ground-truth file) must hold one objective value
    per grid point in grid order.
    """
    pts, res = grid_points(space, resolution)
    if values is not None:
        vals = np.asarray(values, dtype=float).ravel()
        if vals.size != pts.shape[0]:
            raise ValueError(f"ground truth has {vals.size} values, grid has {pts.shape[0]}")
    elif objective is not None:
        vals = _evaluate(objective, pts)
    else:
        raise ValueError("need an objective or precomputed values")
    return ValidationSet(pts, vals > delta, res, float(delta))


def _evaluate(objective: Callable, pts: np.ndarray) -> np.ndarray:
    batch = getattr(objective, "batch", None)
    if batch is not None:
        vals = np.asarray(batch(pts), dtype=float)
    else:
        vals = np.array([np.asarray(objective(p), dtype=float).item() for p in pts])
    vals = vals.reshape(-1)
    if vals.size != pts.shape[0]:
        raise ValueError("objective returned the wrong number of values")
    return vals


# -- regressors ----------------------------------------------------------------


class KnnRegressor:
    """Inverse-distance-weighted k-nearest-neighbor regression."""

    def __init__(self, x, y, k: int = KNN_K, power: float = KNN_POWER):
        self.x = np.atleast_2d(np.asarray(x, dtype=float))
        self.y = np.asarray(y, dtype=float)
        self.k = min(k, self.y.size)
        self.power = power
        self._tree = cKDTree(self.x)

    def __call__(self, q) -> np.ndarray:
        q = np.atleast_2d(np.asarray(q, dtype=float))
        d, idx = self._tree.query(q, k=self.k)
        d = d.reshape(q.shape[0], self.k)
        idx = idx.reshape(q.shape[0], self.k)
        out = np.empty(q.shape[0])
        exact = d[:, 0] == 0.0
        out[exact] = self.y[idx[exact, 0]]
        w = 1.0 / d[~exact] ** self.power
        out[~exact] = (w * self.y[idx[~exact]]).sum(1) / w.sum(1)
        return out


class LinearRegressor:
    """Piecewise-linear interpolation over a Delaunay triangulation; NaN outside the hull."""

    def __init__(self, x, y):
        self._f = LinearNDInterpolator(np.asarray(x, dtype=float), np.asarray(y, dtype=float),
                                       fill_value=np.nan)

    def __call__(self, q) -> np.ndarray:
        return np.asarray(self._f(np.atleast_2d(np.asarray(q, dtype=float))), dtype=float).ravel()


def fit_regressor(x, y, space: SearchSpace | None = None):
    """Regressor of the sampled objective.

    Up to three dimensions this is linear interpolation (undefined, NaN,
    outside the convex hull of the samples); above three it is k-NN
    inverse-distance weighting.  Inputs are normalized first when ``space``
    is given so no axis dominates the triangulation.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float)
    dim = x.shape[1]
    if y.size < dim + 1:
        raise ValueError(f"need at least {dim + 1} records to fit, got {y.size}")
    if space is not None:
        x = space.normalize(x)
    if dim > 3:
        reg = KnnRegressor(x, y)
    else:
        try:
            reg = LinearRegressor(x, y) if dim > 1 else _Linear1D(x[:, 0], y)
        except (QhullError, ValueError) as exc:
            warnings.warn(f"degenerate sample geometry ({exc.__class__.__name__}); using nearest neighbor")
            reg = KnnRegressor(x, y, k=1)
    if space is None:
        return reg
    return lambda q: reg(space.normalize(np.clip(np.atleast_2d(q), space.lower, space.upper)))


class _Linear1D:
    def __init__(self, x, y):
        order = np.argsort(x, kind="stable")
        self.x, self.y = x[order], y[order]
        if np.ptp(self.x) == 0:
            raise ValueError("all samples coincide")

    def __call__(self, q):
        q = np.atleast_2d(q)[:, 0]
        return np.interp(q, self.x, self.y, left=np.nan, right=np.nan)


def classify(regressor, delta: float, points) -> np.ndarray:
    """Strict ``f_hat > delta``; undefined (NaN) predictions are non-critical."""
    pred = np.asarray(regressor(points), dtype=float)
    with np.errstate(invalid="ignore"):
        return np.nan_to_num(pred, nan=-np.inf) > delta


def confusion_and_metrics(pred, truth, budget_used: int = 0) -> CoverageReport:
    pred = np.asarray(pred, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if pred.shape != truth.shape:
        raise ValueError("prediction and truth lengths differ")
    tp = int(np.sum(pred & truth))
    fp = int(np.sum(pred & ~truth))
    fn = int(np.sum(~pred & truth))
    tn = int(np.sum(~pred & ~truth))
    recall = 1.0 if tp + fn == 0 else tp / (tp + fn)
    precision = 1.0 if tp + fp == 0 else tp / (tp + fp)
    denom = 4.0 * precision + recall
    f2 = 0.0 if denom == 0 else 5.0 * precision * recall / denom
    return CoverageReport(recall, precision, f2, budget_used, ConfusionCounts(tp, fp, fn, tn))


def score_prefix(x, y, validation: ValidationSet, space: SearchSpace | None = None) -> CoverageReport:
    reg = fit_regressor(x, y, space)
    pred = classify(reg, validation.delta, validation.points)
    return confusion_and_metrics(pred, validation.truth, len(y))


@dataclass(frozen=True)
class Checkpoint:
    budget: int
    report: CoverageReport | None

    @property
    def skipped(self) -> bool:
        return self.report is None


def checkpoint_budgets(n: int, cadence: int) -> list[int]:
    if cadence < 1:
        raise ValueError("cadence must be >= 1")
    out = list(range(cadence, n + 1, cadence))
    if n and (not out or out[-1] != n):
        out.append(n)
    return out


def f2_checkpoints(dataset: Dataset, validation: ValidationSet, cadence: int,
                   budgets: Sequence[int] | None = None) -> list[Checkpoint]:
    """Score every dataset prefix at multiples of ``cadence`` plus the full set.

    Prefixes too small to fit a regressor yield a skipped checkpoint.
    """
    n = len(dataset)
    budgets = checkpoint_budgets(n, cadence) if budgets is None else [b for b in budgets if b <= n]
    out = []
    x, y = dataset.x, dataset.y
    for b in budgets:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                rep = score_prefix(x[:b], y[:b], validation, dataset.space)
        except (ValueError, QhullError) as exc:
            log.debug("checkpoint %d skipped: %s", b, exc)
            rep = None
        out.append(Checkpoint(b, rep))
    return out


def write_metrics(path, checkpoints: Sequence[Checkpoint]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["budget", "recall", "precision", "f2"])
        for c in checkpoints:
            if c.report is None:
                w.writerow([c.budget, "skipped", "skipped", "skipped"])
            else:
                r = c.report
                w.writerow([c.budget, repr(r.recall), repr(r.precision), repr(r.f2)])


def read_metrics(path) -> list[Checkpoint]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            if row["f2"] == "skipped":
                out.append(Checkpoint(int(row["budget"]), None))
            else:
                out.append(Checkpoint(int(row["budget"]), CoverageReport(
                    float(row["recall"]), float(row["precision"]), float(row["f2"]), int(row["budget"]))))
    return out


# -- ground-truth files ---------------------------------------------------------

_TRUTH_TAG = "# lambda-bbc ground truth "


def write_ground_truth(path, space: SearchSpace, resolution, delta: float, values) -> None:
    """CSV with a JSON header line, then ``x1..xd,y,critical`` rows in grid order."""
    pts, res = grid_points(space, resolution)
    values = np.asarray(values, dtype=float).ravel()
    if values.size != pts.shape[0]:
        raise ValueError("value count does not match the grid")
    header = {"dims": space.dim, "resolution": list(res), "lower": space.lower.tolist(),
              "upper": space.upper.tolist(), "delta": delta}
    with open(path, "w", newline="") as fh:
        fh.write(_TRUTH_TAG + json.dumps(header) + "\n")
        w = csv.writer(fh)
        w.writerow([f"x{i + 1}" for i in range(space.dim)] + ["y", "critical"])
        for p, v in zip(pts, values):
            w.writerow([repr(float(c)) for c in p] + [repr(float(v)), int(v > delta)])


def read_ground_truth(path) -> tuple[SearchSpace, tuple[int, ...], float, np.ndarray]:
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.startswith(_TRUTH_TAG):
            raise ValueError(f"{path} is not a ground-truth file")
        header = json.loads(first[len(_TRUTH_TAG):])
        rows = list(csv.reader(fh))
    space = SearchSpace(header["lower"], header["upper"])
    res = tuple(header["resolution"])
    values = np.array([float(r[-2]) for r in rows[1:]])
    if values.size != int(np.prod(res)):
        raise ValueError("ground-truth row count does not match its resolution")
    return space, res, float(header["delta"]), values


def load_validation(path, delta: float | None = None) -> ValidationSet:
    space, res, file_delta, values = read_ground_truth(path)
    d = file_delta if delta is None else delta
    return build_validation_set(space, res, d, values=values)
