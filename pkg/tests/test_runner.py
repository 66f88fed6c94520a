import json

import numpy as np
import pytest

from lambda_bbc import runner
from lambda_bbc.evaluation import Checkpoint, CoverageReport, read_metrics
from lambda_bbc.objectives import make_problem


def tiny(**kw):
    cfg = runner.load_config("holder")
    pairs = ["budget=120", "init_samples=32", "selections_per_treeification=5",
             "validation_resolution=30", "eval_cadence=20", "repetitions=1"]
    pairs += [f"{k}={v}" for k, v in kw.items()]
    return runner.apply_overrides(cfg, pairs)


@pytest.mark.parametrize("name", runner.PRESETS)
def test_presets_load(name):
    cfg = runner.load_config(name)
    assert cfg.repetitions == 10
    cfg.settings()
    assert cfg.problem().space.dim == {"holder": 2, "ripples3": 3, "ripples5": 5, "scenario": 2}[name]


def test_holder_preset_values():
    cfg = runner.load_config("holder")
    assert (cfg.c_p, cfg.leafsize, cfg.depth, cfg.init_samples) == (1.0, 10, 8, 256)
    assert (cfg.beam_width, cfg.selections_per_treeification, cfg.samples_per_selection) == (2, 50, 1)
    r5 = runner.load_config("ripples5")
    assert (r5.c_p, r5.leafsize, r5.depth, r5.init_samples, r5.beam_width) == (0.8, 50, 9, 1024, 15)
    assert r5.local_sampler == "trust-region"
    sc = runner.load_config("scenario")
    assert (sc.c_p, sc.init_samples) == (0.25, 64)


def test_overrides():
    cfg = runner.apply_overrides(runner.load_config("ripples3"),
                                 ["c_p=0.5", "trust_region.batch=3", "objective_params.dim=2"])
    assert cfg.c_p == 0.5 and cfg.trust_region["batch"] == 3
    assert cfg.problem().space.dim == 2
    for bad in (["nonsense=1"], ["c_p"], ["c_p.x=1"], ["algorithm=bayes"], ["trust_region.foo=1"]):
        with pytest.raises(ValueError):
            runner.apply_overrides(runner.load_config("holder"), bad)


def test_config_file(tmp_path):
    p = tmp_path / "cfg.yaml"
    p.write_text("objective: holder\nbudget: 300\n")
    cfg = runner.load_config(str(p))
    assert cfg.budget == 300 and cfg.c_p == 1.0
    p.write_text("objective: holder\nbudgett: 300\n")
    with pytest.raises(ValueError):
        runner.load_config(str(p))


def test_run_artifacts(tmp_path):
    art = runner.run(tiny(dump_trees="true"), tmp_path)
    x, y, ms, truncated = runner.read_records(art.records)
    assert not truncated and len(y) == 120
    assert np.array_equal(x, art.data.x) and np.array_equal(y, art.data.y)
    header = art.records.read_text().splitlines()[0]
    assert header == "index,x1,x2,y,wall_ms"
    cps = read_metrics(art.metrics)
    assert [c.budget for c in cps] == list(range(20, 121, 20))
    man = json.loads(art.manifest.read_text())
    assert man["records"] == 120 and man["config"]["budget"] == 120
    assert art.trees and all(p.exists() for p in art.trees)
    with pytest.raises(ValueError):
        runner.run_baseline(tiny(), out_dir=tmp_path / "b")
    with pytest.raises(ValueError):
        runner.run_lambda(tiny(algorithm="random"), out_dir=tmp_path / "c")


def test_reproducible_records(tmp_path):
    a = runner.run(tiny(seed=4), tmp_path / "a", evaluate=False)
    b = runner.run(tiny(seed=4), tmp_path / "b", evaluate=False)
    assert a.records.read_bytes() == b.records.read_bytes()
    c = runner.run(tiny(seed=5), tmp_path / "c", evaluate=False)
    assert a.records.read_bytes() != c.records.read_bytes()


def test_truncation_marker(tmp_path, monkeypatch):
    cfg = tiny()
    prob = cfg.problem()
    calls = {"n": 0}

    def failing(x):
        calls["n"] += 1
        if calls["n"] > 50:
            raise RuntimeError("solver diverged")
        return float(prob.batch(np.atleast_2d(x))[0])

    monkeypatch.setattr(runner.CampaignConfig, "problem",
                        lambda self: _Wrapped(prob, failing))
    art = runner.run(cfg, tmp_path)
    assert art.truncated and "solver diverged" in art.error
    x, y, _, truncated = runner.read_records(art.records)
    assert truncated and len(y) == 50
    assert art.records.read_text().splitlines()[-1].startswith(runner.TRUNCATION_MARKER)
    assert json.loads(art.manifest.read_text())["truncated"] is True


class _Wrapped:
    def __init__(self, prob, fn):
        self._p, self._fn = prob, fn
        self.space, self.delta, self.centers = prob.space, prob.delta, prob.centers

    def __call__(self, x):
        return self._fn(x)

    def batch(self, pts):
        return self._p.batch(pts)


def test_suite_and_aggregate(tmp_path):
    res = runner.run_suite(tiny(repetitions=3, seed=10), tmp_path)
    assert len(res.runs) == 3 and not res.failures
    assert [json.loads(r.manifest.read_text())["seed"] for r in res.runs] == [10, 11, 12]
    rows = res.table
    for row in rows:
        vals = []
        for r in res.runs:
            vals += [c.report.f2 for c in r.checkpoints if c.budget == row["budget"] and c.report]
        assert row["mean_f2"] == pytest.approx(np.mean(vals), rel=1e-12)
        assert row["min_f2"] == min(vals) and row["max_f2"] == max(vals)
    lines = res.aggregate.read_text().splitlines()
    assert lines[0] == "budget,mean_f2,min_f2,max_f2,count" and len(lines) == len(rows) + 1


def test_aggregate_skips_missing():
    rep = lambda f: CoverageReport(f, f, f)  # noqa: E731
    rows = runner.aggregate_checkpoints([[Checkpoint(10, None), Checkpoint(20, rep(0.5))],
                                         [Checkpoint(10, rep(0.2)), Checkpoint(20, rep(0.7))]])
    assert rows[0] == {"budget": 10, "mean_f2": 0.2, "min_f2": 0.2, "max_f2": 0.2, "count": 1}
    assert rows[1]["mean_f2"] == pytest.approx(0.6)


def test_ground_truth_file_used_for_validation(tmp_path):
    prob = make_problem("scenario")
    path = tmp_path / "truth.csv"
    vs = runner.generate_ground_truth(prob, 20, path)
    cfg = runner.apply_overrides(runner.load_config("scenario"), [f"truth_file={path}"])
    v2 = runner.validation_for(cfg)
    assert v2.resolution == (20, 20)
    assert np.array_equal(v2.truth, vs.truth)


def brute_modalities(x, y, centers, delta, radius=None):
    out = []
    for i in range(len(centers)):
        hits, first = 0, None
        for j, (p, v) in enumerate(zip(x, y)):
            d = [np.linalg.norm(p - c) for c in centers]
            if v > delta and int(np.argmin(d)) == i and (radius is None or d[i] <= radius):
                hits += 1
                first = j if first is None else first
        out.append((hits, first))
    return out


def test_modality_report_against_brute_force(tmp_path):
    prob = make_problem("ripples", dim=3)
    rng = np.random.default_rng(0)
    x = np.vstack([prob.centers + rng.normal(0, 0.3, prob.centers.shape), rng.uniform(-5, 5, (200, 3))])
    y = prob.batch(x)
    for radius in (None, 0.4):
        hits = runner.report_modality_coverage(x, y, prob.centers, prob.delta, radius)
        assert [(h.hits, h.first_hit) for h in hits] == brute_modalities(x, y, prob.centers, prob.delta, radius)
    assert runner.modalities_hit(runner.report_modality_coverage(x, y, prob.centers, prob.delta)) == 3
    empty = runner.report_modality_coverage(np.empty((0, 3)), np.empty(0), prob.centers, prob.delta)
    assert runner.modalities_hit(empty) == 0
    p = tmp_path / "mod.csv"
    runner.write_modality_report(p, empty)
    assert p.read_text().splitlines()[1] == "0,0,"
