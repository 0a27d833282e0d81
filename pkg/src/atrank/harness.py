"""Experiment orchestration: identification curves, year sweeps and the spammer robustness study.

Reports are long-form rows ``(experiment, algorithm, parameter, metric, value)``
plus a provenance block. Output is a pure function of the plan: no clocks,
no unseeded randomness, and rows are merged in grid order regardless of
how cells were scheduled.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import io
import json
import logging
import os
import tempfile
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from . import __version__
from .algorithms import ALGORITHMS, make_config, run_algorithm
from .algorithms.result import RankingResult, config_echo
from .metrics import MetricError, auc, evaluate_ranking, matching_number, parse_auc_mode, rmse_auc
from .model import (
    EmptyGraphError,
    GroundTruth,
    RatingEvent,
    RatingScale,
    TemporalBipartiteGraph,
    build_graph,
    load_ground_truth,
    load_true_qualities,
    parse_ratings,
    restrict_to_years,
)
from .synth import InjectionError, SpamInjection, inject_random_spammers

log = logging.getLogger(__name__)

__all__ = [
    "ConfigError",
    "ReportError",
    "Row",
    "ExperimentPlan",
    "ExperimentReport",
    "parse_grid",
    "injection_seed",
    "rmse_standard_error",
    "load_plan",
    "run_identification",
    "run_year_sweep",
    "run_robustness",
    "emit_report",
    "read_report_csv",
    "atomic_write",
    "file_digest",
]

CSV_COLUMNS = ("experiment", "algorithm", "parameter", "metric", "value")


class ConfigError(ValueError):
    pass


class ReportError(ValueError):
    pass


@dataclass(frozen=True)
class Row:
    experiment: str
    algorithm: str
    parameter: str
    metric: str
    value: float | int | str


@dataclass
class ExperimentPlan:
    """Everything an experiment needs; ``graph`` and ``events`` must describe the same data."""

    graph: TemporalBipartiteGraph
    events: Sequence[RatingEvent]
    truth: GroundTruth | None = None
    algorithms: Sequence[str] = ALGORITHMS
    algorithm_options: dict[str, dict[str, Any]] = field(default_factory=dict)
    f_grid: Sequence[float] = tuple(range(1, 11))
    sweep_f: float = 5.0
    horizons: Sequence[int] | None = None
    spammer_grid: Sequence[int] = (0,)
    n_samples: int = 10
    ratings_per_spammer: int | None = None
    master_seed: int = 0
    auc_mode: str = "exact"
    auc_samples: int | None = None
    auc_seed: int | None = None
    top_fraction: float = 0.1
    jobs: int = 1
    max_cells: int | None = None
    inputs: dict[str, str] = field(default_factory=dict)

    def validate(self) -> None:
        if not self.algorithms:
            raise ConfigError("algorithm list is empty")
        unknown = [a for a in self.algorithms if a not in ALGORITHMS]
        if unknown:
            raise ConfigError(f"unknown algorithm(s) {unknown}; choose from {', '.join(ALGORITHMS)}")
        for a in self.algorithms:
            try:
                make_config(a, self.algorithm_options.get(a))
            except (KeyError, ValueError) as exc:
                raise ConfigError(str(exc)) from None
        if not self.f_grid:
            raise ConfigError("f grid is empty")
        if not self.spammer_grid:
            raise ConfigError("spammer grid is empty")
        if self.n_samples < 1:
            raise ConfigError("need at least one sample per spammer count")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")

    def echo(self) -> dict[str, Any]:
        return {
            "algorithms": list(self.algorithms),
            "algorithm_configs": {
                a: config_echo(make_config(a, self.algorithm_options.get(a))) for a in self.algorithms
            },
            "f_grid": [float(f) for f in self.f_grid],
            "sweep_f": float(self.sweep_f),
            "horizons": None if self.horizons is None else [int(h) for h in self.horizons],
            "spammer_grid": [int(n) for n in self.spammer_grid],
            "n_samples": self.n_samples,
            "ratings_per_spammer": self.ratings_per_spammer,
            "master_seed": self.master_seed,
            "auc_mode": self.auc_mode,
            "auc_samples": self.auc_samples,
            "auc_seed": self.auc_seed,
            "top_fraction": self.top_fraction,
            "max_cells": self.max_cells,
        }


@dataclass
class ExperimentReport:
    experiment: str
    algorithms: list[str]
    rows: list[Row] = field(default_factory=list)
    provenance: dict[str, Any] = field(default_factory=dict)
    tables: dict[str, list[dict[str, Any]]] = field(default_factory=dict)


def parse_grid(text: str, kind: Callable = int) -> list:
    """``start:step:stop`` (inclusive) or a comma-separated list."""
    text = text.strip()
    if not text:
        raise ConfigError("empty grid")
    try:
        if ":" not in text:
            return [kind(p) for p in text.split(",") if p.strip()]
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError(f"range grid must be start:step:stop, got {text!r}")
        start, step, stop = (kind(p) for p in parts)
    except ValueError:
        raise ConfigError(f"bad grid value in {text!r}") from None
    if step <= 0:
        raise ConfigError("grid step must be positive")
    if start > stop:
        raise ConfigError(f"empty grid {text!r}")
    out, v = [], start
    while v <= stop + (1e-9 if kind is float else 0):
        out.append(v)
        v = start + step * len(out)
    return out


def injection_seed(master_seed: int, n_spammers: int, sample: int) -> int:
    """Seed of one robustness cell, derived from the master seed and the cell's coordinates.

    Counter-based, so adding samples or spammer counts leaves existing cells unchanged.
    """
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(n_spammers), int(sample)))
    return int(ss.generate_state(1, np.uint64)[0])


def rmse_standard_error(samples: Sequence[float], baseline: float) -> float:
    """Delta-method standard error of the RMSE over the samples."""
    d2 = (np.asarray(samples, float) - baseline) ** 2
    if d2.size < 2:
        return 0.0
    rmse = float(np.sqrt(d2.mean()))
    if rmse == 0:
        return 0.0
    se_msd = float(d2.std(ddof=1) / np.sqrt(d2.size))
    return se_msd / (2.0 * rmse)


def file_digest(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _positives(plan: ExperimentPlan, graph: TemporalBipartiteGraph, horizon: int | None = None) -> set[str]:
    if plan.truth is None:
        raise ConfigError("this experiment needs a ground-truth file")
    if plan.truth.is_target_set:
        targets = plan.truth.positives() if horizon is None else plan.truth.positives_until(horizon)
    else:
        targets = plan.truth.positives(plan.top_fraction)
    present = set(graph.item_ids)
    return {a for a in targets if a in present}


def _provenance(plan: ExperimentPlan, experiment: str, extra: dict | None = None) -> dict[str, Any]:
    prov = {
        "tool": "atrank",
        "version": __version__,
        "experiment": experiment,
        "inputs": dict(sorted(plan.inputs.items())),
        "graph": {
            "users": plan.graph.n_users,
            "items": plan.graph.n_items,
            "ratings": plan.graph.n_ratings,
            "years": [int(plan.graph.years[0]), int(plan.graph.years[-1])],
        },
        "plan": plan.echo(),
    }
    if extra:
        prov.update(extra)
    return prov


def _map(plan: ExperimentPlan, fn: Callable, cells: Sequence) -> list:
    if plan.jobs == 1 or len(cells) <= 1:
        return [fn(c) for c in cells]
    with ThreadPoolExecutor(max_workers=plan.jobs) as pool:
        return list(pool.map(fn, cells))


def _run(plan: ExperimentPlan, algorithm: str, graph: TemporalBipartiteGraph) -> RankingResult:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return run_algorithm(algorithm, graph, plan.algorithm_options.get(algorithm))


def _run_summary(result: RankingResult) -> dict[str, Any]:
    return {"converged": result.converged, "iterations": list(result.iterations)}


def ratings_per_year_table(graph: TemporalBipartiteGraph) -> list[dict[str, Any]]:
    return [{"year": t, "n_ratings": n} for t, n in graph.ratings_per_year().items()]


def run_identification(plan: ExperimentPlan) -> ExperimentReport:
    """M@f, AUC, precision, recall and F for every algorithm and every f."""
    plan.validate()
    positives = _positives(plan, plan.graph)
    if not positives:
        raise ConfigError("none of the ground-truth items occur in the data")
    results = _map(plan, lambda a: _run(plan, a, plan.graph), list(plan.algorithms))
    rows = []
    for algorithm, result in zip(plan.algorithms, results):
        scores = result.quality_map()
        ranked = result.ranking()
        for f in plan.f_grid:
            rep = evaluate_ranking(scores, ranked, positives, f, plan.auc_mode, plan.auc_samples, plan.auc_seed)
            param = f"f={_fmt_num(f)}"
            rows += [
                Row("identification", algorithm, param, "m", rep.m),
                Row("identification", algorithm, param, "auc", rep.auc),
                Row("identification", algorithm, param, "precision", rep.precision),
                Row("identification", algorithm, param, "recall", rep.recall),
                Row("identification", algorithm, param, "f_value", rep.f_value),
            ]
    runs = {a: _run_summary(r) for a, r in zip(plan.algorithms, results)}
    return ExperimentReport(
        "identification",
        list(plan.algorithms),
        rows,
        _provenance(plan, "identification", {"n_positives": len(positives), "runs": runs}),
        {"ratings_per_year": ratings_per_year_table(plan.graph)},
    )


def run_year_sweep(plan: ExperimentPlan) -> ExperimentReport:
    """M at ``plan.sweep_f`` for data up to each horizon year, against items awarded by then."""
    plan.validate()
    years = [int(t) for t in plan.graph.years]
    horizons = list(plan.horizons) if plan.horizons is not None else years
    skipped = []
    cells = []
    for h in horizons:
        if h < years[0]:
            warnings.warn(f"horizon {h} precedes the first data year {years[0]}; skipped", stacklevel=2)
            skipped.append(int(h))
            continue
        cells.append(int(h))

    def cell(h: int):
        g = restrict_to_years(plan.graph, h)
        positives = _positives(plan, g, h)
        out = []
        for algorithm in plan.algorithms:
            result = _run(plan, algorithm, g)
            m = matching_number(result.ranking(), positives, plan.sweep_f) if positives else 0
            out.append((algorithm, m, len(positives)))
        return out

    rows = []
    for h, out in zip(cells, _map(plan, cell, cells)):
        for algorithm, m, n_pos in out:
            rows.append(Row("year_sweep", algorithm, f"horizon={h}", "m", m))
    rows.sort(key=lambda r: (list(plan.algorithms).index(r.algorithm), int(r.parameter.split("=")[1])))
    prov = _provenance(plan, "year_sweep", {"horizons": cells, "skipped_horizons": skipped})
    return ExperimentReport("year_sweep", list(plan.algorithms), rows, prov)


def run_robustness(plan: ExperimentPlan) -> ExperimentReport:
    """RMSE of AUC under injected random-rating users, per algorithm and spammer count."""
    plan.validate()
    positives = _positives(plan, plan.graph)
    if not positives:
        raise ConfigError("none of the ground-truth items occur in the data")
    graph = plan.graph
    years = [int(t) for t in graph.years]

    def auc_of(result: RankingResult) -> float:
        return auc(result.quality_map(), positives, plan.auc_mode, plan.auc_samples, plan.auc_seed)

    clean = _map(plan, lambda a: auc_of(_run(plan, a, graph)), list(plan.algorithms))
    auc_real = dict(zip(plan.algorithms, clean))

    cells = [(int(n), s) for n in plan.spammer_grid for s in range(plan.n_samples)]
    capped = []
    if plan.max_cells is not None and len(cells) > plan.max_cells:
        capped = cells[plan.max_cells :]
        cells = cells[: plan.max_cells]
        warnings.warn(f"runtime cap: {len(capped)} robustness cell(s) not run", stacklevel=2)

    def cell(c):
        n, s = c
        seed = injection_seed(plan.master_seed, n, s)
        try:
            events = inject_random_spammers(
                plan.events, graph.item_ids, years, graph.scale, SpamInjection(n, plan.ratings_per_spammer, seed)
            )
        except InjectionError as exc:
            return seed, None, str(exc)
        g = graph if n == 0 else build_graph(events, graph.scale)
        return seed, [auc_of(_run(plan, a, g)) for a in plan.algorithms], None

    outcomes = _map(plan, cell, cells)
    rows = []
    failed = {}
    samples: dict[tuple[str, int], list[float]] = {}
    sample_rows: dict[str, list[Row]] = {a: [] for a in plan.algorithms}
    for (n, s), (seed, aucs, err) in zip(cells, outcomes):
        if err is not None:
            failed[f"n={n};sample={s}"] = err
            continue
        for algorithm, value in zip(plan.algorithms, aucs):
            samples.setdefault((algorithm, n), []).append(value)
            sample_rows[algorithm].append(
                Row("robustness", algorithm, f"n={n};sample={s};seed={seed}", "auc_ran", value)
            )
    for algorithm in plan.algorithms:
        rows.append(Row("robustness", algorithm, "clean", "auc_real", auc_real[algorithm]))
        rows += sample_rows[algorithm]
        for n in plan.spammer_grid:
            got = samples.get((algorithm, int(n)))
            if not got:
                continue
            rows.append(Row("robustness", algorithm, f"n={int(n)}", "rmse", rmse_auc(got, auc_real[algorithm])))
            rows.append(
                Row("robustness", algorithm, f"n={int(n)}", "rmse_se", rmse_standard_error(got, auc_real[algorithm]))
            )
    extra = {
        "n_positives": len(positives),
        "seed_scheme": "SeedSequence(entropy=master_seed, spawn_key=(n, sample)); shared by all algorithms",
        "failed_cells": failed,
        "capped_cells": [f"n={n};sample={s}" for n, s in capped],
    }
    return ExperimentReport("robustness", list(plan.algorithms), rows, _provenance(plan, "robustness", extra))


def _fmt_num(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return str(int(v)) if v.is_integer() else repr(v)


def _fmt_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def atomic_write(path: str | os.PathLike, data: str) -> None:
    """Write ``data`` to ``path`` through a temporary file and a rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def _rows_csv(rows: Iterable[Row]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow((r.experiment, r.algorithm, r.parameter, r.metric, _fmt_value(r.value)))
    return buf.getvalue()


def _table_csv(table: list[dict[str, Any]]) -> str:
    buf = io.StringIO()
    if table:
        w = csv.writer(buf, lineterminator="\n")
        cols = list(table[0])
        w.writerow(cols)
        for rec in table:
            w.writerow([_fmt_value(rec[c]) for c in cols])
    return buf.getvalue()


def _json_value(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def emit_report(
    report: ExperimentReport, fmt: str | Sequence[str], destination: str | os.PathLike, stem: str | None = None
) -> list[Path]:
    """Write the report as CSV and/or JSON under ``destination``.

    Files are ``<stem>.csv`` / ``<stem>.json`` (stem defaults to the
    experiment name) plus one CSV per auxiliary table. Every input check
    happens before the first write, and each file is written atomically.
    """
    formats = [fmt] if isinstance(fmt, str) else list(fmt)
    bad = [f for f in formats if f not in ("csv", "json")]
    if bad:
        raise ReportError(f"unknown report format(s) {bad}")
    if not report.algorithms:
        raise ReportError("report has no algorithms")
    if not report.rows:
        raise ReportError("report has no rows")
    dest = Path(destination)
    dest.mkdir(parents=True, exist_ok=True)
    if not os.access(dest, os.W_OK):
        raise PermissionError(f"cannot write to {dest}")
    stem = stem or report.experiment

    payloads: list[tuple[Path, str]] = []
    if "csv" in formats:
        payloads.append((dest / f"{stem}.csv", _rows_csv(report.rows)))
    if "json" in formats:
        doc = {
            "provenance": report.provenance,
            "columns": list(CSV_COLUMNS),
            "rows": [[r.experiment, r.algorithm, r.parameter, r.metric, _json_value(r.value)] for r in report.rows],
        }
        payloads.append((dest / f"{stem}.json", json.dumps(doc, indent=2, sort_keys=True, default=_json_value) + "\n"))
    for name, table in sorted(report.tables.items()):
        payloads.append((dest / f"{name}.csv", _table_csv(table)))
    for path, data in payloads:
        atomic_write(path, data)
        log.info("wrote %s", path)
    return [p for p, _ in payloads]


def read_report_csv(path: str | os.PathLike) -> list[Row]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != CSV_COLUMNS:
            raise ReportError(f"unexpected report header {header}")
        rows = []
        for exp, alg, param, metric, value in reader:
            rows.append(Row(exp, alg, param, metric, _parse_value(value)))
    return rows


def _parse_value(text: str):
    if text in ("true", "false"):
        return text == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def read_plan_file(path: str | os.PathLike) -> dict[str, str]:
    """Flat ``key = value`` file; ``#`` comments. Dotted keys carry algorithm options (``atr.threshold``)."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    text = Path(path).read_text(encoding="utf-8")
    try:
        parser.read_string("[plan]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return dict(parser["plan"])


def load_plan(settings: dict[str, Any], base_dir: str | os.PathLike | None = None) -> ExperimentPlan:
    """Build a plan from flat settings (plan-file values overlaid with CLI flags)."""
    base = Path(base_dir) if base_dir else Path(".")

    def path_of(key):
        p = Path(settings[key])
        return p if p.is_absolute() else base / p

    if "input" not in settings:
        raise ConfigError("plan needs an input rating file")
    scale = RatingScale(
        float(settings.get("scale_min", 1)),
        float(settings.get("scale_max", 5)),
        str(settings.get("scale_integral", "true")).lower() in ("1", "true", "yes"),
    )
    inputs = {}
    src = path_of("input")
    with open(src, encoding="utf-8", newline="") as fh:
        events = parse_ratings(fh, scale, settings.get("time_unit", "year"))
    inputs[str(settings["input"])] = file_digest(src)
    dedupe = settings.get("dedupe") or None
    graph = build_graph(events, scale, dedupe=dedupe)
    if dedupe:
        events = list(graph.events())

    truth = None
    if settings.get("truth"):
        p = path_of("truth")
        with open(p, encoding="utf-8") as fh:
            truth = load_ground_truth(fh)
        inputs[str(settings["truth"])] = file_digest(p)
    elif settings.get("truth_qualities"):
        p = path_of("truth_qualities")
        with open(p, encoding="utf-8", newline="") as fh:
            truth = load_true_qualities(fh)
        inputs[str(settings["truth_qualities"])] = file_digest(p)

    options: dict[str, dict[str, Any]] = {}
    for key, value in settings.items():
        if "." in key:
            alg, opt = key.split(".", 1)
            options.setdefault(alg, {})[opt] = value

    def opt(key, kind, default):
        v = settings.get(key)
        return default if v in (None, "") else kind(v)

    algorithms = settings.get("algorithms")
    if isinstance(algorithms, str):
        algorithms = [a.strip() for a in algorithms.split(",") if a.strip()]
    plan = ExperimentPlan(
        graph=graph,
        events=events,
        truth=truth,
        algorithms=tuple(algorithms) if algorithms is not None else ALGORITHMS,
        algorithm_options=options,
        f_grid=parse_grid(settings["f"], float) if settings.get("f") else tuple(range(1, 11)),
        sweep_f=opt("sweep_f", float, 5.0),
        horizons=parse_grid(settings["horizons"], int) if settings.get("horizons") else None,
        spammer_grid=parse_grid(settings["spammers"], int) if settings.get("spammers") else (0,),
        n_samples=opt("samples", int, 10),
        ratings_per_spammer=opt("ratings_per_spammer", int, None),
        master_seed=opt("seed", int, 0),
        auc_mode=settings.get("auc_mode", "exact"),
        auc_samples=None,
        top_fraction=opt("top_fraction", float, 0.1),
        jobs=opt("jobs", int, 1),
        max_cells=opt("max_cells", int, None),
        inputs=inputs,
    )
    try:
        plan.auc_mode, plan.auc_samples, plan.auc_seed = parse_auc_mode(plan.auc_mode)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    plan.validate()
    return plan
