import json
import subprocess
import sys

import numpy as np

from lambda_bbc.cli import main
from lambda_bbc.runner import read_records

SMALL = ["--set", "init_samples=32", "--set", "selections_per_treeification=5",
         "--set", "validation_resolution=30", "--set", "eval_cadence=20"]


def last_json(text):
    return json.loads(text.strip().splitlines()[-1])


def test_run_and_eval(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["run", "--budget", "100", "--seed", "1", "--out", str(out)] + SMALL) == 0
    summary = last_json(capsys.readouterr().out)
    assert summary["records"] == 100 and 0 <= summary["final_f2"] <= 1
    x, y, _, truncated = read_records(out / "records.csv")
    assert len(y) == 100 and not truncated

    assert main(["eval", str(out / "records.csv"), "--cadence", "50", "--output", str(tmp_path / "m.csv")]
                + SMALL) == 0
    rep = last_json(capsys.readouterr().out)
    assert rep["checkpoints"] == 2 and rep["final_f2"] == summary["final_f2"]


def test_suite(tmp_path, capsys):
    assert main(["suite", "--repetitions", "2", "--budget", "80", "--algorithm", "random",
                 "--out", str(tmp_path)] + SMALL) == 0
    rep = last_json(capsys.readouterr().out)
    assert rep["runs"] == 2 and rep["failures"] == 0 and rep["final"]["budget"] == 80
    assert (tmp_path / "rep_001" / "records.csv").exists()


def test_truth_and_report(tmp_path, capsys):
    truth = tmp_path / "truth.csv"
    assert main(["truth", "--config", "scenario", "--resolution", "12", str(truth)]) == 0
    assert last_json(capsys.readouterr().out)["points"] == 144
    out = tmp_path / "rip"
    args = ["--config", "ripples3", "--set", "objective_params.dim=2", "--set", "local_sampler=reject-sobol",
            "--set", "init_samples=64", "--budget", "300", "--set", "validation_resolution=20"]
    assert main(["run", "--out", str(out), "--set", "eval_cadence=100"] + args) == 0
    capsys.readouterr()
    assert main(["report", str(out / "records.csv"), "--output", str(tmp_path / "mod.csv")] + args) == 0
    rep = last_json(capsys.readouterr().out)
    assert len(rep["per_center"]) == 2
    assert (tmp_path / "mod.csv").read_text().startswith("center,hits,first_hit")
    # the scenario has no modality centers
    assert main(["report", str(out / "records.csv"), "--config", "scenario"]) == 2
    assert json.loads(capsys.readouterr().err.strip())["error"] == "config"


def test_bad_input_exit_codes(tmp_path, capsys):
    assert main(["run", "--set", "c_p.x=1"]) == 2
    err = json.loads(capsys.readouterr().err.strip())
    assert err["error"] == "ValueError"
    assert main(["run", "--config", str(tmp_path / "missing.yaml")]) == 2
    assert main(["eval", str(tmp_path / "missing.csv")]) == 2


def test_external_protocol_subprocess(tmp_path):
    cmd = [sys.executable, "-m", "lambda_bbc.cli", "run", "--external", "--campaign-id", "ext",
           "--budget", "40", "--seed", "3", "--set", "init_samples=32"]
    proc = subprocess.Popen(cmd, stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True)
    from lambda_bbc.objectives import holder_table

    n_told = 0
    while True:
        proc.stdin.write(json.dumps({"op": "ask", "n": 16}) + "\n")
        proc.stdin.flush()
        reply = json.loads(proc.stdout.readline())
        assert reply["campaign"] == "ext" and reply["seed"] == 3
        pts = reply["points"]
        if not pts:
            break
        res = [{"x": p, "y": float(holder_table(np.array(p)))} for p in pts]
        proc.stdin.write(json.dumps({"op": "tell", "results": res}) + "\n")
        proc.stdin.flush()
        ack = json.loads(proc.stdout.readline())
        n_told += len(pts)
        assert ack["remaining"] == 40 - n_told
    proc.stdin.close()
    assert proc.wait(timeout=30) == 0 and n_told == 40
