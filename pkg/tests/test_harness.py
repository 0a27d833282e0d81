import json
import os
import stat
import warnings

import pytest

from atrank.harness import (
    CSV_COLUMNS,
    ConfigError,
    ExperimentPlan,
    ExperimentReport,
    ReportError,
    Row,
    emit_report,
    file_digest,
    injection_seed,
    load_plan,
    parse_grid,
    read_plan_file,
    read_report_csv,
    rmse_standard_error,
    run_identification,
    run_robustness,
    run_year_sweep,
)
from atrank.model import GroundTruth, RatingEvent, build_graph
from atrank.synth import SynthParams, generate_artificial

from conftest import FIXTURES


def synthetic_plan(seed=0, **kw):
    events, truth = generate_artificial(SynthParams(120, 80, 0.2, n_years=4, seed=seed))
    return ExperimentPlan(build_graph(events), events, truth, **kw)


def rows_of(report, metric):
    return [r for r in report.rows if r.metric == metric]


def test_parse_grid():
    assert parse_grid("100:100:300") == [100, 200, 300]
    assert parse_grid("1,5,10") == [1, 5, 10]
    assert parse_grid("0.5:0.5:2", float) == [0.5, 1.0, 1.5, 2.0]
    for bad in ("1:0:5", "5:1:1", "", "a,b"):
        with pytest.raises(ConfigError):
            parse_grid(bad)


def test_identification_m_rises_with_f():
    report = run_identification(synthetic_plan(algorithms=("avg", "ir", "atr")))
    for alg in ("avg", "ir", "atr"):
        ms = [r.value for r in rows_of(report, "m") if r.algorithm == alg]
        assert len(ms) == 10
        assert ms == sorted(ms)
    plan = synthetic_plan()
    counts = [t["n_ratings"] for t in report.tables["ratings_per_year"]]
    assert counts == [int(v) for v in plan.graph.ratings_per_year().values()]


def test_identification_single_f():
    report = run_identification(synthetic_plan(algorithms=("avg", "cr"), f_grid=(5,)))
    assert len(rows_of(report, "m")) == 2


def test_planted_winners_zero_noise():
    events, truth = generate_artificial(SynthParams(100, 60, 0.5, noise_sigma=0.0, seed=4))
    # winners: items whose rounded quality is the top level, at most 10% of items
    winners = sorted(a for a, q in truth.qualities.items() if q >= 4.5)[:6]
    plan = ExperimentPlan(build_graph(events), events, GroundTruth.target_set(winners), algorithms=("avg",), f_grid=(10,))
    assert run_identification(plan).rows[0].value == len(winners)


def test_missing_truth():
    plan = synthetic_plan(algorithms=("avg",))
    plan.truth = None
    with pytest.raises(ConfigError):
        run_identification(plan)


def test_plan_validation():
    with pytest.raises(ConfigError):
        run_identification(synthetic_plan(algorithms=("avg", "magic")))
    with pytest.raises(ConfigError):
        run_identification(synthetic_plan(algorithms=()))
    with pytest.raises(ConfigError):
        run_identification(synthetic_plan(algorithm_options={"atr": {"speed": "9"}}, algorithms=("atr",)))


def test_year_sweep_full_horizon_matches_identification():
    plan = synthetic_plan(algorithms=("avg", "atr"), f_grid=(5,))
    ident = {r.algorithm: r.value for r in rows_of(run_identification(plan), "m")}
    sweep = run_year_sweep(plan)
    last = f"horizon={int(plan.graph.years[-1])}"
    assert {r.algorithm: r.value for r in sweep.rows if r.parameter == last} == ident
    assert len(sweep.rows) == 2 * len(plan.graph.years)


def test_year_sweep_single_year_and_skip():
    events = [RatingEvent(f"u{i}", f"i{j}", float(1 + (i + j) % 5), 2000) for i in range(5) for j in range(4)]
    plan = ExperimentPlan(build_graph(events), events, GroundTruth.target_set(["i1"]), algorithms=("avg", "ir"))
    assert len(run_year_sweep(plan).rows) == 2
    plan.horizons = (1999, 2000)
    with pytest.warns(UserWarning, match="1999"):
        report = run_year_sweep(plan)
    assert report.provenance["skipped_horizons"] == [1999]
    assert len(report.rows) == 2


def test_year_sweep_award_years():
    events = []
    for i in range(6):
        for j in range(6):
            events.append(RatingEvent(f"u{i}", f"i{j}", float(1 + (j % 5)), 2000 + (i + j) % 2))
    truth = GroundTruth.target_set(["i4", "i3"], {"i4": 2001, "i3": 2001})
    plan = ExperimentPlan(build_graph(events), events, truth, algorithms=("avg",), sweep_f=50)
    ms = {r.parameter: r.value for r in run_year_sweep(plan).rows}
    assert ms["horizon=2000"] == 0
    assert ms["horizon=2001"] == 2


def test_robustness_shape_and_zero():
    plan = synthetic_plan(algorithms=("avg", "ir"), spammer_grid=(0, 5), n_samples=2)
    report = run_robustness(plan)
    rmse = {(r.algorithm, r.parameter): r.value for r in rows_of(report, "rmse")}
    assert rmse[("avg", "n=0")] == 0.0 and rmse[("ir", "n=0")] == 0.0
    assert len(rows_of(report, "auc_ran")) == 2 * 2 * 2
    assert len(rows_of(report, "auc_real")) == 2
    one = run_robustness(synthetic_plan(algorithms=("avg", "ir", "cr"), spammer_grid=(5,), n_samples=1))
    assert len(rows_of(one, "rmse")) == 3


def test_robustness_cells_independent_of_sample_count():
    small = run_robustness(synthetic_plan(algorithms=("avg",), spammer_grid=(4, 8), n_samples=2))
    large = run_robustness(synthetic_plan(algorithms=("avg",), spammer_grid=(4, 8), n_samples=4))
    a = {r.parameter: r.value for r in rows_of(small, "auc_ran")}
    b = {r.parameter: r.value for r in rows_of(large, "auc_ran")}
    assert a.items() <= b.items()
    # each row names its seed, so the cell can be rerun on its own
    assert all(f"seed={injection_seed(0, int(p.split(';')[0][2:]), int(p.split(';')[1][7:]))}" in p for p in a)


def test_robustness_infeasible_cell_skipped():
    plan = synthetic_plan(algorithms=("avg",), spammer_grid=(0, 3), n_samples=1, ratings_per_spammer=10_000)
    report = run_robustness(plan)
    assert list(report.provenance["failed_cells"]) == ["n=3;sample=0"]
    assert [r.parameter for r in rows_of(report, "rmse")] == ["n=0"]


def test_robustness_runtime_cap():
    plan = synthetic_plan(algorithms=("avg",), spammer_grid=(2, 4), n_samples=3, max_cells=4)
    with pytest.warns(UserWarning, match="cap"):
        report = run_robustness(plan)
    assert report.provenance["capped_cells"] == ["n=4;sample=1", "n=4;sample=2"]


def test_parallel_matches_serial(tmp_path):
    serial = run_robustness(synthetic_plan(algorithms=("avg", "atr"), spammer_grid=(0, 5), n_samples=3))
    parallel = run_robustness(synthetic_plan(algorithms=("avg", "atr"), spammer_grid=(0, 5), n_samples=3, jobs=4))
    assert serial.rows == parallel.rows


def test_rmse_standard_error():
    assert rmse_standard_error([0.5], 0.5) == 0.0
    assert rmse_standard_error([0.5, 0.5], 0.5) == 0.0
    assert rmse_standard_error([0.4, 0.6, 0.5, 0.7], 0.5) > 0


def small_report():
    rows = [
        Row("identification", "avg", "f=1", "m", 2),
        Row("identification", "avg", "f=1", "auc", 0.875),
        Row("identification", "atr", "f=1", "converged", True),
    ]
    return ExperimentReport("identification", ["avg", "atr"], rows, {"tool": "atrank"}, {"ratings_per_year": [{"year": 2000, "n_ratings": 3}]})


def test_emit_round_trip(tmp_path):
    report = small_report()
    paths = emit_report(report, ["csv", "json"], tmp_path)
    assert [p.name for p in paths] == ["identification.csv", "identification.json", "ratings_per_year.csv"]
    assert sorted(read_report_csv(paths[0]), key=repr) == sorted(report.rows, key=repr)
    doc = json.loads(paths[1].read_text())
    assert doc["columns"] == list(CSV_COLUMNS)
    assert len(doc["rows"]) == 3


def test_emit_golden(tmp_path):
    emit_report(small_report(), "csv", tmp_path)
    assert (tmp_path / "identification.csv").read_bytes() == (FIXTURES / "golden_report.csv").read_bytes()


def test_emit_byte_stable(tmp_path):
    emit_report(small_report(), ["csv", "json"], tmp_path / "a")
    emit_report(small_report(), ["csv", "json"], tmp_path / "b")
    for name in ("identification.csv", "identification.json"):
        assert file_digest(tmp_path / "a" / name) == file_digest(tmp_path / "b" / name)


def test_emit_errors_write_nothing(tmp_path):
    empty = ExperimentReport("identification", [], small_report().rows, {})
    with pytest.raises(ReportError):
        emit_report(empty, "csv", tmp_path / "out")
    assert not (tmp_path / "out").exists()
    with pytest.raises(ReportError):
        emit_report(small_report(), "xml", tmp_path / "out")
    assert not (tmp_path / "out").exists()


@pytest.mark.skipif(os.geteuid() == 0, reason="root ignores directory permissions")
def test_emit_unwritable(tmp_path):
    d = tmp_path / "ro"
    d.mkdir()
    d.chmod(stat.S_IRUSR | stat.S_IXUSR)
    with pytest.raises(OSError):
        emit_report(small_report(), "csv", d)


def test_emit_unwritable_target_leaves_no_partial(tmp_path):
    # a directory squatting on the target name makes the final rename fail
    (tmp_path / "identification.csv").mkdir()
    with pytest.raises(OSError):
        emit_report(small_report(), "csv", tmp_path)
    assert [p.name for p in tmp_path.iterdir()] == ["identification.csv"]


def test_plan_file_and_precedence(tmp_path):
    plan_file = tmp_path / "plan.txt"
    plan_file.write_text(
        "# toy plan\n"
        f"input = {FIXTURES / 'toy.csv'}\n"
        f"truth = {FIXTURES / 'toy_winners.txt'}\n"
        "algorithms = avg, atr\n"
        "f = 5,10\n"
        "seed = 3\n"
        "atr.threshold = 1e-6\n"
    )
    settings = read_plan_file(plan_file)
    plan = load_plan(settings, tmp_path)
    assert plan.algorithms == ("avg", "atr") and list(plan.f_grid) == [5.0, 10.0]
    assert plan.algorithm_options == {"atr": {"threshold": "1e-6"}}
    assert plan.master_seed == 3
    settings["seed"] = "9"
    assert load_plan(settings, tmp_path).master_seed == 9
    settings["auc_mode"] = "sampled:100:4"
    p = load_plan(settings, tmp_path)
    assert (p.auc_mode, p.auc_samples, p.auc_seed) == ("sampled", 100, 4)
    settings["auc_mode"] = "bogus"
    with pytest.raises(ConfigError):
        load_plan(settings, tmp_path)


def test_plan_file_relative_paths(tmp_path):
    (tmp_path / "d.csv").write_text((FIXTURES / "toy.csv").read_text())
    (tmp_path / "plan.txt").write_text("input = d.csv\nalgorithms = avg\n")
    plan = load_plan(read_plan_file(tmp_path / "plan.txt"), tmp_path)
    assert plan.graph.n_ratings == 30


def test_determinism_of_reports(tmp_path):
    for d in ("a", "b"):
        plan = synthetic_plan(algorithms=("avg", "birank", "atr"), spammer_grid=(0, 4), n_samples=2, master_seed=5)
        emit_report(run_robustness(plan), ["csv", "json"], tmp_path / d)
    for name in ("robustness.csv", "robustness.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
