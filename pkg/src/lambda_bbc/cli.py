"""Command-line entry point: run, suite, truth, eval, report."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path


from . import runner
from .domain import Dataset
from .evaluation import f2_checkpoints, write_metrics


def _config(args) -> runner.CampaignConfig:
    cfg = runner.load_config(args.config)
    pairs = list(args.set or [])
    for key in ("seed", "budget", "algorithm", "output_dir", "repetitions", "truth_file"):
        val = getattr(args, key, None)
        if val is not None:
            pairs.append(f"{key}={val}")
    return runner.apply_overrides(cfg, pairs)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default="holder",
                   help="YAML config path or preset name (%s)" % ", ".join(runner.PRESETS))
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any config key; dots address nested keys (trust_region.batch=5)")
    p.add_argument("--seed", type=int)
    p.add_argument("--budget", type=int)
    p.add_argument("--algorithm", choices=["lambda", "lambda-predecessor-mode", "random", "sobol"])
    p.add_argument("--out", dest="output_dir")
    p.add_argument("--truth", dest="truth_file", help="ground-truth CSV for validation")


def cmd_run(args) -> int:
    cfg = _config(args)
    if args.external:
        from .protocol import serve
        session = runner.external_session(cfg, args.campaign_id)
        errors = serve(session, sys.stdin, sys.stdout)
        return 0 if errors == 0 else 3
    art = runner.run(cfg, evaluate=not args.no_eval)
    summary = {"records": len(art.data), "directory": str(art.directory), "truncated": art.truncated}
    if art.checkpoints and art.checkpoints[-1].report is not None:
        summary["final_f2"] = art.checkpoints[-1].report.f2
    print(json.dumps(summary))
    if art.truncated:
        _error("objective", art.error or "truncated")
        return 4
    return 0


def cmd_suite(args) -> int:
    cfg = _config(args)
    res = runner.run_suite(cfg)
    last = res.table[-1] if res.table else {}
    print(json.dumps({"aggregate": str(res.aggregate), "runs": len(res.runs),
                      "failures": len(res.failures), "final": last}))
    return 0 if not res.failures else 4


def cmd_truth(args) -> int:
    cfg = _config(args)
    problem = cfg.problem()
    res = args.resolution if args.resolution is not None else cfg.validation_resolution
    vs = runner.generate_ground_truth(problem, res, args.output, cfg.delta)
    print(json.dumps({"file": args.output, "points": len(vs), "positives": int(vs.truth.sum())}))
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    problem = cfg.problem()
    x, y, ms, truncated = runner.read_records(args.records)
    data = Dataset(problem.space, capacity=max(len(y), 1))
    if len(y):
        data.extend(x, y, ms)
    cps = f2_checkpoints(data, runner.validation_for(cfg, problem), args.cadence or cfg.eval_cadence)
    out = args.output or str(Path(args.records).with_name("metrics.csv"))
    write_metrics(out, cps)
    final = cps[-1].report if cps and cps[-1].report is not None else None
    print(json.dumps({"metrics": out, "checkpoints": len(cps), "truncated": truncated,
                      "final_f2": None if final is None else final.f2}))
    return 0


def cmd_report(args) -> int:
    cfg = _config(args)
    problem = cfg.problem()
    if problem.centers is None:
        _error("config", f"objective {cfg.objective!r} has no known modality centers")
        return 2
    x, y, _, _ = runner.read_records(args.records)
    hits = runner.report_modality_coverage(x, y, problem.centers, problem.delta, args.radius)
    if args.output:
        runner.write_modality_report(args.output, hits)
    print(json.dumps({"modalities_hit": runner.modalities_hit(hits),
                      "per_center": [{"center": h.center, "hits": h.hits, "first_hit": h.first_hit}
                                     for h in hits]}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lambda-bbc", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a single campaign")
    _add_common(p)
    p.add_argument("--no-eval", action="store_true", help="skip F2 checkpoints")
    p.add_argument("--external", action="store_true",
                   help="serve the NDJSON ask/tell protocol on stdio instead of a built-in objective")
    p.add_argument("--campaign-id", default="campaign")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("suite", help="repetitions with derived seeds plus an aggregate")
    _add_common(p)
    p.add_argument("--repetitions", type=int)
    p.set_defaults(func=cmd_suite)

    p = sub.add_parser("truth", help="generate a ground-truth grid file")
    _add_common(p)
    p.add_argument("--resolution", type=int)
    p.add_argument("output")
    p.set_defaults(func=cmd_truth)

    p = sub.add_parser("eval", help="re-score an existing records file")
    _add_common(p)
    p.add_argument("records")
    p.add_argument("--cadence", type=int)
    p.add_argument("--output")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="modality coverage of a records file")
    _add_common(p)
    p.add_argument("records")
    p.add_argument("--radius", type=float)
    p.add_argument("--output")
    p.set_defaults(func=cmd_report)
    return ap


def _error(kind: str, message: str) -> None:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError) as exc:
        _error(type(exc).__name__, str(exc))
        return 2


if __name__ == "__main__":
    sys.exit(main())
