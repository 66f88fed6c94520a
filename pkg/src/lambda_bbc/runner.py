"""Campaign configuration, artifact persistence, suites and reports."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import platform
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy
import yaml

from . import __version__
from .domain import CampaignError, Dataset, SearchSpace
from .evaluation import (Checkpoint, ValidationSet, build_validation_set, f2_checkpoints,
                         load_validation, write_ground_truth, write_metrics)
from .objectives import Problem, make_problem
from .samplers import TrustRegionConfig
from .search import Campaign, SearchSettings, run_campaign

log = logging.getLogger(__name__)

PRESETS = ("holder", "ripples3", "ripples5", "scenario")
TRUNCATION_MARKER = "# truncated"


@dataclass
class CampaignConfig:
    objective: str = "holder"
    objective_params: dict = field(default_factory=dict)
    delta: float | None = None
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
    exploration_scale: float | str = "auto"
    scramble: bool = True
    local_budget: int = 200
    trust_region: dict = field(default_factory=dict)
    eval_cadence: int = 10
    validation_resolution: int | list = 100
    truth_file: str | None = None
    repetitions: int = 1
    output_dir: str = "runs/out"
    record_timing: bool = False
    dump_trees: bool = False

    def __post_init__(self):
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if self.eval_cadence < 1:
            raise ValueError("eval_cadence must be >= 1")
        unknown = set(self.trust_region) - {f.name for f in dataclasses.fields(TrustRegionConfig)}
        if unknown:
            raise ValueError(f"unknown trust_region keys {sorted(unknown)}")
        self.settings()  # validates the algorithm knobs

    @classmethod
    def from_dict(cls, d: dict) -> "CampaignConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def settings(self, seed: int | None = None) -> SearchSettings:
        return SearchSettings(
            algorithm=self.algorithm, budget=self.budget,
            seed=self.seed if seed is None else seed, c_p=self.c_p,
            leafsize=self.leafsize, depth=self.depth, init_samples=self.init_samples,
            beam_width=self.beam_width,
            selections_per_treeification=self.selections_per_treeification,
            samples_per_selection=self.samples_per_selection,
            local_sampler=self.local_sampler, density_k=self.density_k,
            rebuild_interval=self.rebuild_interval, scramble=self.scramble,
            local_budget=self.local_budget, exploration_scale=self.exploration_scale,
            trust_region=TrustRegionConfig(**self.trust_region))

    def problem(self) -> Problem:
        pr = make_problem(self.objective, **self.objective_params)
        if self.delta is not None:
            pr.delta = float(self.delta)
        return pr


def load_config(path_or_preset: str) -> CampaignConfig:
    """Read a YAML config file, or a shipped preset by name."""
    if path_or_preset in PRESETS:
        text = resources.files("lambda_bbc").joinpath("presets", f"{path_or_preset}.yaml").read_text()
    else:
        text = Path(path_or_preset).read_text()
    return CampaignConfig.from_dict(yaml.safe_load(text) or {})


def apply_overrides(config: CampaignConfig, pairs: Sequence[str]) -> CampaignConfig:
    """``key=value`` overrides; values are parsed as YAML, dots address nested dicts."""
    d = config.to_dict()
    for pair in pairs:
        if "=" not in pair:
            raise ValueError(f"override {pair!r} is not key=value")
        key, raw = pair.split("=", 1)
        value = yaml.safe_load(raw)
        parts = key.strip().split(".")
        tgt = d
        for p in parts[:-1]:
            if not isinstance(tgt.get(p), dict):
                raise ValueError(f"{p!r} is not a nested config section")
            tgt = tgt[p]
        if len(parts) == 1 and parts[0] not in d:
            raise ValueError(f"unknown config key {parts[0]!r}")
        tgt[parts[-1]] = value
    return CampaignConfig.from_dict(d)


# -- records ------------------------------------------------------------------


class RecordWriter:
    """Incremental records CSV: ``index, x1..xd, y, wall_ms``."""

    def __init__(self, path: Path, dim: int):
        self.path = Path(path)
        self._fh = open(self.path, "w", newline="")
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow(["index"] + [f"x{i + 1}" for i in range(dim)] + ["y", "wall_ms"])
        self._n = 0

    def write(self, data: Dataset, start: int) -> None:
        x, y, ms = data.x, data.y, data.wall_ms
        for i in range(start, len(data)):
            self._w.writerow([i] + [repr(float(v)) for v in x[i]] + [repr(float(y[i])), repr(float(ms[i]))])
        self._n = len(data)
        self._fh.flush()

    def truncate(self, reason: str) -> None:
        self._fh.write(f"{TRUNCATION_MARKER}: {reason}\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


def read_records(path) -> tuple[np.ndarray, np.ndarray, np.ndarray, bool]:
    """``(x, y, wall_ms, truncated)`` from a records CSV."""
    xs, ys, ms = [], [], []
    truncated = False
    with open(path, newline="") as fh:
        header = fh.readline().strip().split(",")
        dim = len(header) - 3
        for line in fh:
            if line.startswith("#"):
                truncated = truncated or line.startswith(TRUNCATION_MARKER)
                continue
            row = line.strip().split(",")
            xs.append([float(v) for v in row[1: 1 + dim]])
            ys.append(float(row[1 + dim]))
            ms.append(float(row[2 + dim]))
    return np.array(xs).reshape(-1, dim), np.array(ys), np.array(ms), truncated


# -- validation cache -------------------------------------------------------------

_VALIDATION_CACHE: dict = {}


def validation_for(config: CampaignConfig, problem: Problem | None = None) -> ValidationSet:
    problem = problem or config.problem()
    if config.truth_file:
        return load_validation(config.truth_file, problem.delta)
    res = config.validation_resolution
    key = (config.objective, json.dumps(config.objective_params, sort_keys=True),
           json.dumps(res), problem.delta)
    if key not in _VALIDATION_CACHE:
        _VALIDATION_CACHE[key] = build_validation_set(problem.space, res, problem.delta, objective=problem)
    return _VALIDATION_CACHE[key]


# -- single runs ----------------------------------------------------------------------


@dataclass
class RunArtifacts:
    directory: Path
    records: Path
    metrics: Path | None
    manifest: Path
    trees: list[Path]
    data: Dataset
    checkpoints: list[Checkpoint]
    truncated: bool = False
    error: str | None = None


def _versions() -> dict:
    return {"lambda_bbc": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__}


def run(config: CampaignConfig, out_dir=None, seed: int | None = None,
        evaluate: bool = True) -> RunArtifacts:
    """One campaign (LAMBDA or a baseline) with its artifacts."""
    seed = config.seed if seed is None else seed
    out = Path(out_dir if out_dir is not None else config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    problem = config.problem()
    settings = config.settings(seed)
    writer = RecordWriter(out / "records.csv", problem.space.dim)
    trees: list[Path] = []

    def on_treeify(tree, n):
        if config.dump_trees:
            p = out / "trees" / f"tree_{n:07d}.json"
            p.parent.mkdir(exist_ok=True)
            tree.dump(p)
            trees.append(p)

    error = None
    try:
        camp = run_campaign(problem, problem.space, settings, timing=config.record_timing,
                            on_batch=writer.write, on_treeify=on_treeify)
    except CampaignError as exc:
        camp = exc.campaign
        error = str(exc)
        writer.truncate(error)
    finally:
        writer.close()
    data = camp.data

    checkpoints: list[Checkpoint] = []
    metrics = None
    if evaluate and len(data):
        checkpoints = f2_checkpoints(data, validation_for(config, problem), config.eval_cadence)
        metrics = out / "metrics.csv"
        write_metrics(metrics, checkpoints)

    manifest = out / "manifest.json"
    body = {"config": config.to_dict(), "seed": seed, "records": len(data),
            "treeifications": camp.state.treeifications, "truncated": error is not None,
            "error": error, "versions": _versions()}
    manifest.write_text(json.dumps(body, indent=1, sort_keys=True) + "\n")
    if error is not None:
        log.error("campaign truncated after %d records: %s", len(data), error)
    return RunArtifacts(out, out / "records.csv", metrics, manifest, trees, data, checkpoints,
                        error is not None, error)


def run_baseline(config: CampaignConfig, **kw) -> RunArtifacts:
    if config.algorithm not in ("random", "sobol"):
        raise ValueError("run_baseline needs algorithm random or sobol")
    return run(config, **kw)


def run_lambda(config: CampaignConfig, **kw) -> RunArtifacts:
    if not config.algorithm.startswith("lambda"):
        raise ValueError("run_lambda needs a lambda algorithm")
    return run(config, **kw)


# -- suites -----------------------------------------------------------------------------


@dataclass
class SuiteResult:
    runs: list[RunArtifacts]
    failures: list[tuple[int, str]]
    aggregate: Path
    table: list[dict]


def aggregate_checkpoints(per_run: Sequence[Sequence[Checkpoint]]) -> list[dict]:
    """Mean/min/max F2 per budget over the runs that reported that budget."""
    by_budget: dict[int, list[float]] = {}
    for cps in per_run:
        for c in cps:
            if c.report is not None:
                by_budget.setdefault(c.budget, []).append(c.report.f2)
    rows = []
    for b in sorted(by_budget):
        v = np.array(by_budget[b])
        rows.append({"budget": b, "mean_f2": float(v.mean()), "min_f2": float(v.min()),
                     "max_f2": float(v.max()), "count": int(v.size)})
    return rows


def run_suite(config: CampaignConfig, out_dir=None) -> SuiteResult:
    """``repetitions`` runs with seeds ``seed + i`` plus an aggregate CSV."""
    out = Path(out_dir if out_dir is not None else config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    runs, failures = [], []
    for i in range(config.repetitions):
        seed = config.seed + i
        try:
            art = run(config, out / f"rep_{i:03d}", seed=seed)
        except Exception as exc:  # noqa: BLE001 - a failed repetition must not sink the suite
            failures.append((seed, repr(exc)))
            continue
        if art.truncated:
            failures.append((seed, art.error or "truncated"))
        runs.append(art)
    table = aggregate_checkpoints([r.checkpoints for r in runs if not r.truncated])
    agg = out / "aggregate.csv"
    with open(agg, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["budget", "mean_f2", "min_f2", "max_f2", "count"])
        for r in table:
            w.writerow([r["budget"], repr(r["mean_f2"]), repr(r["min_f2"]), repr(r["max_f2"]), r["count"]])
    return SuiteResult(runs, failures, agg, table)


# -- ground truth and coverage reports -------------------------------------------------


def generate_ground_truth(problem: Problem, resolution, path, delta: float | None = None) -> ValidationSet:
    """Evaluate the objective on the full grid and persist values and labels."""
    d = problem.delta if delta is None else float(delta)
    vs = build_validation_set(problem.space, resolution, d, objective=problem)
    values = problem.batch(vs.points)
    write_ground_truth(path, problem.space, vs.resolution, d, values)
    return vs


@dataclass(frozen=True)
class ModalityHit:
    center: int
    hits: int
    first_hit: int | None


def report_modality_coverage(x, y, centers, delta: float, radius: float | None = None,
                             space: SearchSpace | None = None) -> list[ModalityHit]:
    """Per-center count of records above ``delta`` whose nearest center it is.

    Distances are measured in normalized coordinates when ``space`` is given.
    ``radius`` additionally bounds the distance to the center.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float)
    c = np.atleast_2d(np.asarray(centers, dtype=float))
    if space is not None:
        x, c = space.normalize(x), space.normalize(c)
    out = []
    if x.shape[0] == 0:
        return [ModalityHit(i, 0, None) for i in range(c.shape[0])]
    d = np.sqrt(((x[:, None, :] - c[None, :, :]) ** 2).sum(-1))
    near = np.argmin(d, axis=1)
    ok = y > delta
    if radius is not None:
        ok &= d[np.arange(x.shape[0]), near] <= radius
    for i in range(c.shape[0]):
        idx = np.flatnonzero(ok & (near == i))
        out.append(ModalityHit(i, int(idx.size), int(idx[0]) if idx.size else None))
    return out


def modalities_hit(hits: Sequence[ModalityHit]) -> int:
    return sum(h.hits > 0 for h in hits)


def write_modality_report(path, hits: Sequence[ModalityHit]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["center", "hits", "first_hit"])
        for h in hits:
            w.writerow([h.center, h.hits, "" if h.first_hit is None else h.first_hit])


def external_session(config: CampaignConfig, campaign_id: str, seed: int | None = None):
    """Ask/tell session for an objective evaluated outside this process."""
    from .protocol import AskTellSession

    problem = config.problem()
    camp = Campaign(problem.space, config.settings(seed))
    return AskTellSession(camp, campaign_id)

