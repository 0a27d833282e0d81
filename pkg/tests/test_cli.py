import csv
import json
import subprocess
import sys

import pytest

import oracles as O
from atrank import __version__
from atrank.cli import main

from conftest import FIXTURES

TOY = str(FIXTURES / "toy.csv")
WINNERS = str(FIXTURES / "toy_winners.txt")


def toy_log():
    with open(TOY, newline="") as fh:
        rows = [(r["user"], r["item"], float(r["rating"]), int(r["year"])) for r in csv.DictReader(fh)]
    return sorted(rows, key=lambda e: e[3])


def read_scores(path):
    out = {"item": {}, "user": {}}
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            out[r["kind"]][r["id"]] = float(r["score"])
    return out


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    assert "rank" in capsys.readouterr().out
    for cmd in ("ingest", "synth", "rank", "evaluate", "robustness", "year-sweep", "report"):
        assert main([cmd, "--help"]) == 0


def test_version_json(capsys):
    assert main(["--version"]) == 0
    assert json.loads(capsys.readouterr().out) == {"name": "atrank", "version": __version__}


def test_unknown_subcommand(capsys):
    assert main(["frobnicate"]) == 2
    assert main([]) == 2


def test_unknown_flag_suggests(capsys):
    assert main(["rank", "--algorithm", "atr", "--input", TOY, "--rescal"]) == 2
    assert "--rescale" in capsys.readouterr().err


def test_exclusive_truth_flags(tmp_path):
    assert main(["report", "--input", TOY, "--truth", WINNERS, "--truth-qualities", WINNERS]) == 2


def test_rank_atr_matches_oracle(tmp_path):
    out = tmp_path / "atr.csv"
    assert main(["-q", "rank", "--algorithm", "atr", "--input", TOY, "--out", str(out)]) == 0
    scores = read_scores(out)
    q, r, _ = O.atr(toy_log())
    assert scores["item"].keys() == q.keys()
    for a in q:
        assert scores["item"][a] == pytest.approx(q[a], abs=1e-10)
    for u in r:
        assert scores["user"][u] == pytest.approx(r[u], abs=1e-10)
    diag = json.loads((tmp_path / "atr.csv.diagnostics.json").read_text())
    assert diag["converged"] is True and diag["algorithm"] == "atr"


def test_rank_config_and_set(tmp_path):
    cfg = tmp_path / "opts.txt"
    cfg.write_text("atr.threshold = 1e-8\nbirank.alpha = 0.5\n")
    out = tmp_path / "r.csv"
    assert main(["-q", "rank", "--algorithm", "atr", "--input", TOY, "--config", str(cfg), "--set", "relaxation=0.8", "--out", str(out)]) == 0
    diag = json.loads((tmp_path / "r.csv.diagnostics.json").read_text())
    assert diag["config"]["threshold"] == 1e-8
    assert diag["config"]["relaxation"] == 0.8


def test_rank_bad_option_is_usage_error(tmp_path):
    assert main(["-q", "rank", "--algorithm", "ir", "--input", TOY, "--set", "speed=3"]) == 2


def test_ingest_summary(capsys):
    assert main(["-q", "ingest", "--input", TOY]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["ratings"] == 30 and summary["users"] == 6


def test_domain_error_exits_one(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("user,item,rating,year\nu1,i1,9,2001\n")
    out = tmp_path / "o.csv"
    assert main(["-q", "rank", "--algorithm", "avg", "--input", str(bad), "--out", str(out)]) == 1
    assert not out.exists()
    assert "line 2" in capsys.readouterr().err


def test_missing_input_is_usage_error(tmp_path):
    assert main(["-q", "rank", "--algorithm", "avg", "--input", str(tmp_path / "nope.csv")]) == 2


def test_report_writes_and_env_dir(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("ATRANK_OUTPUT_DIR", str(tmp_path / "env"))
    assert main(["-q", "--seed", "1", "report", "--input", TOY, "--truth", WINNERS, "--algorithms", "avg,atr", "--f", "20,40"]) == 0
    with open(tmp_path / "env" / "identification.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert {r["algorithm"] for r in rows} == {"avg", "atr"}
    assert (tmp_path / "env" / "identification.json").exists()


def test_plan_then_flags_precedence(tmp_path):
    plan = tmp_path / "plan.txt"
    plan.write_text(f"input = {TOY}\ntruth = {WINNERS}\nalgorithms = avg, ir\nseed = 4\nf = 10\n")
    out = tmp_path / "rep"
    assert main(["-q", "report", "--plan", str(plan), "--algorithms", "cr", "--out", str(out), "--format", "json"]) == 0
    doc = json.loads((out / "identification.json").read_text())
    assert doc["provenance"]["plan"]["algorithms"] == ["cr"]
    assert doc["provenance"]["plan"]["master_seed"] == 4
    assert not (out / "identification.csv").exists()


def test_bad_format_writes_nothing(tmp_path):
    out = tmp_path / "rep"
    assert main(["-q", "--seed", "1", "report", "--input", TOY, "--truth", WINNERS, "--algorithms", "avg", "--format", "xml", "--out", str(out)]) == 1
    assert not out.exists()


def test_synth_evaluate_round_trip(tmp_path, capsys):
    data, truth = tmp_path / "d.csv", tmp_path / "t.csv"
    assert main(["-q", "--seed", "2", "synth", "--users", "60", "--items", "40", "--sparsity", "0.2", "--out", str(data), "--truth", str(truth)]) == 0
    res = tmp_path / "avg.csv"
    assert main(["-q", "rank", "--algorithm", "avg", "--input", str(data), "--out", str(res)]) == 0
    capsys.readouterr()
    assert main(["-q", "evaluate", "--result", str(res), "--truth-qualities", str(truth), "--f", "10"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert 0.5 < doc["auc"] <= 1.0


def test_console_script_entry():
    proc = subprocess.run([sys.executable, "-m", "atrank.cli", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["name"] == "atrank"
