"""Command-line entry point: ``atrank <subcommand> ...``.

Exit status is 0 on success, 1 on a domain error (bad data, degenerate
input, non-convergence) and 2 on a usage error. Data goes to files or
stdout; logs and diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import csv
import difflib
import io
import json
import logging
import os
import secrets
import sys
import warnings
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .algorithms import ALGORITHMS, DegenerateReputationError, make_config, run_algorithm
from .algorithms.result import NonConvergenceWarning
from .harness import (
    ConfigError,
    ReportError,
    atomic_write,
    emit_report,
    load_plan,
    read_plan_file,
    run_identification,
    run_robustness,
    run_year_sweep,
)
from .metrics import MetricError, evaluate_ranking, parse_auc_mode
from .model import (
    DuplicateEventError,
    EmptyGraphError,
    ParseError,
    RatingScale,
    SelfCitationError,
    build_graph,
    citation_to_bipartite,
    load_ground_truth,
    load_true_qualities,
    parse_citations,
    parse_ratings,
    write_events,
)
from .synth import DegenerateSizeError, InjectionError, SynthParams, generate_artificial

log = logging.getLogger("atrank")

OUTPUT_DIR_ENV = "ATRANK_OUTPUT_DIR"

DOMAIN_ERRORS = (
    ParseError,
    DuplicateEventError,
    EmptyGraphError,
    SelfCitationError,
    DegenerateReputationError,
    DegenerateSizeError,
    InjectionError,
    MetricError,
    ConfigError,
    ReportError,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse with did-you-mean hints for unknown options."""

    def __init__(self, *args, **kwargs):
        kwargs.setdefault("allow_abbrev", False)
        super().__init__(*args, **kwargs)

    def error(self, message: str):
        if "unrecognized arguments" in message:
            known = _option_strings(self)
            hints = []
            for bad in message.split(":", 1)[1].split():
                close = difflib.get_close_matches(bad.split("=")[0], known, n=1)
                if close:
                    hints.append(f"{bad} -> did you mean {close[0]}?")
            if hints:
                message += "\n" + "\n".join(hints)
        super().error(message)


def _option_strings(parser: argparse.ArgumentParser) -> list[str]:
    out = []
    for action in parser._actions:
        out.extend(action.option_strings)
        if isinstance(action, argparse._SubParsersAction):
            for sub in action.choices.values():
                out.extend(_option_strings(sub))
    return sorted(set(out))


def _scale_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scale-min", type=float, default=1.0)
    p.add_argument("--scale-max", type=float, default=5.0)
    p.add_argument("--continuous", action="store_true", help="ratings are not restricted to integers")


def _scale(args) -> RatingScale:
    return RatingScale(args.scale_min, args.scale_max, not args.continuous)


def _truth_args(p: argparse.ArgumentParser, required: bool = False) -> None:
    g = p.add_mutually_exclusive_group(required=required)
    g.add_argument("--truth", help="target items, one per line, optional <TAB>award_year")
    g.add_argument("--truth-qualities", help="item,quality CSV of true qualities (top decile = targets)")


def _experiment_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--plan", help="flat key = value plan file; flags override it")
    p.add_argument("--input", help="rating CSV (user,item,rating,year)")
    _truth_args(p)
    p.add_argument("--algorithms", help=f"comma list from {','.join(ALGORITHMS)}")
    p.add_argument("--auc-mode", help="exact or sampled:N:seed")
    p.add_argument("--format", default=None, help="csv, json or csv,json (default both)")
    p.add_argument("--dedupe", choices=["last"], default=None)
    p.add_argument("--time-unit", choices=["year", "epoch"], default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="atrank", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="store_true", help="print version as JSON and exit")
    parser.add_argument("--seed", type=int, default=None, help="master seed (random and logged if absent)")
    parser.add_argument("--out-dir", default=None, help=f"default output directory (env {OUTPUT_DIR_ENV})")
    parser.add_argument("--jobs", type=int, default=None, help="parallel experiment cells (default 1)")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("-q", "--quiet", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    p = sub.add_parser("ingest", help="validate a rating or citation file and summarize it")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", help="rating CSV (user,item,rating,year)")
    src.add_argument("--citations", help="citation CSV (citing,cited,year)")
    p.add_argument("--default-rating", type=float, default=5.0, help="rating given to every citation")
    p.add_argument("--allow-self-loops", action="store_true")
    p.add_argument("--dedupe", choices=["last"], default=None)
    p.add_argument("--time-unit", choices=["year", "epoch"], default="year")
    p.add_argument("--out", help="write the validated events as rating CSV")
    p.add_argument("--year-counts", help="write the per-year rating counts as CSV")
    _scale_args(p)

    p = sub.add_parser("synth", help="generate an artificial network with known qualities")
    p.add_argument("--users", type=int, default=6000)
    p.add_argument("--items", type=int, default=4000)
    p.add_argument("--sparsity", type=float, default=0.02)
    p.add_argument("--years", type=int, default=10)
    p.add_argument("--noise", type=float, default=0.5)
    p.add_argument("--first-year", type=int, default=2000)
    p.add_argument("--out", required=True, help="rating CSV to write")
    p.add_argument("--truth", required=True, help="item,quality CSV to write")
    _scale_args(p)

    p = sub.add_parser("rank", help="run one ranking algorithm")
    p.add_argument("--algorithm", required=True, choices=ALGORITHMS)
    p.add_argument("--input", required=True)
    p.add_argument("--config", help="key = value options for the algorithm")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one option")
    p.add_argument("--out", help="result CSV (kind,id,score); stdout if absent")
    p.add_argument("--diagnostics", help="diagnostics JSON path (default: <out>.diagnostics.json)")
    p.add_argument("--rescale", action="store_true", help="write item scores min-max rescaled to the rating scale")
    p.add_argument("--dedupe", choices=["last"], default=None)
    p.add_argument("--time-unit", choices=["year", "epoch"], default="year")
    _scale_args(p)

    p = sub.add_parser("evaluate", help="score a result file against ground truth")
    p.add_argument("--result", required=True, help="result CSV from rank")
    _truth_args(p, required=True)
    p.add_argument("--f", type=float, default=5.0, help="top percentage for M, precision, recall, F")
    p.add_argument("--auc-mode", default="exact", help="exact or sampled:N:seed")
    p.add_argument("--top-fraction", type=float, default=0.1, help="target share for --truth-qualities")
    p.add_argument("--out", help="directory for evaluation.json and evaluation.csv; stdout if absent")

    p = sub.add_parser("robustness", help="RMSE of AUC under injected random-rating users")
    _experiment_args(p)
    p.add_argument("--spammers", help="spammer counts, start:step:stop or comma list")
    p.add_argument("--samples", type=int, help="samples per spammer count (default 10)")
    p.add_argument("--ratings-per-spammer", type=int)
    p.add_argument("--max-cells", type=int, help="runtime cap on robustness cells")
    p.add_argument("--out", help="report directory")

    p = sub.add_parser("year-sweep", help="M at f percent for data up to each year")
    _experiment_args(p)
    p.add_argument("--horizons", help="years, start:step:stop or comma list (default every data year)")
    p.add_argument("--f", dest="sweep_f", type=float, help="top percentage (default 5)")
    p.add_argument("--out", help="report directory")

    p = sub.add_parser("report", help="identification report: M, AUC, P, R, F per algorithm and f")
    _experiment_args(p)
    p.add_argument("--f", help="f grid, start:step:stop or comma list (default 1:1:10)")
    p.add_argument("--out", help="report directory")
    return parser


def _setup_logging(args) -> None:
    level = logging.WARNING if args.quiet else (logging.DEBUG if args.verbose else logging.INFO)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    logging.captureWarnings(True)


def _out_dir(args, fallback: str = ".") -> Path:
    out = getattr(args, "out", None) or args.out_dir or os.environ.get(OUTPUT_DIR_ENV) or fallback
    return Path(out)


def _check_readable(*paths) -> None:
    for p in paths:
        if p and not Path(p).is_file():
            raise UsageError(f"no such file: {p}")


def _read_events(path: str, scale: RatingScale, time_unit: str):
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_ratings(fh, scale, time_unit)


def _kv_options(path: str | None, overrides: Sequence[str], algorithm: str) -> dict[str, str]:
    options: dict[str, str] = {}
    if path:
        for key, value in read_plan_file(path).items():
            if "." in key:
                alg, key = key.split(".", 1)
                if alg != algorithm:
                    continue
            options[key] = value
    for item in overrides:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        options[k.strip()] = v.strip()
    return options


def cmd_ingest(args) -> int:
    _check_readable(args.input, args.citations)
    scale = _scale(args)
    if args.citations:
        with open(args.citations, encoding="utf-8", newline="") as fh:
            edges = parse_citations(fh)
        events = citation_to_bipartite(edges, args.default_rating, args.allow_self_loops, scale)
    else:
        events = _read_events(args.input, scale, args.time_unit)
    graph = build_graph(events, scale, dedupe=args.dedupe)
    summary = {
        "users": graph.n_users,
        "items": graph.n_items,
        "ratings": graph.n_ratings,
        "mean_user_degree": graph.n_ratings / graph.n_users,
        "mean_item_degree": graph.n_ratings / graph.n_items,
        "first_year": int(graph.years[0]),
        "last_year": int(graph.years[-1]),
        "ratings_per_year": {str(t): n for t, n in graph.ratings_per_year().items()},
    }
    if args.out:
        buf = io.StringIO()
        write_events(graph.events(), buf)
        atomic_write(args.out, buf.getvalue())
    if args.year_counts:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("year", "n_ratings"))
        for t, n in graph.ratings_per_year().items():
            w.writerow((t, n))
        atomic_write(args.year_counts, buf.getvalue())
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def cmd_synth(args) -> int:
    params = SynthParams(
        n_users=args.users,
        n_items=args.items,
        sparsity=args.sparsity,
        n_years=args.years,
        noise_sigma=args.noise,
        scale=_scale(args),
        seed=args.seed,
        first_year=args.first_year,
    )
    log.info("effective configuration: %s", json.dumps({"command": "synth", **vars(params), "scale": vars(params.scale)}, sort_keys=True, default=str))
    events, truth = generate_artificial(params)
    buf = io.StringIO()
    write_events(events, buf)
    tbuf = io.StringIO()
    w = csv.writer(tbuf, lineterminator="\n")
    w.writerow(("item", "quality"))
    for item, q in truth.qualities.items():
        w.writerow((item, repr(q)))
    atomic_write(args.out, buf.getvalue())
    atomic_write(args.truth, tbuf.getvalue())
    log.info("wrote %d events to %s", len(events), args.out)
    return 0


def cmd_rank(args) -> int:
    _check_readable(args.input, args.config)
    options = _kv_options(args.config, args.set, args.algorithm)
    try:
        config = make_config(args.algorithm, options)
    except (KeyError, ValueError) as exc:
        raise UsageError(str(exc).strip("'\"")) from None
    scale = _scale(args)
    events = _read_events(args.input, scale, args.time_unit)
    graph = build_graph(events, scale, dedupe=args.dedupe)
    log.info(
        "effective configuration: %s",
        json.dumps({"command": "rank", "algorithm": args.algorithm, "input": args.input, "options": options}, sort_keys=True),
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonConvergenceWarning)
        result = run_algorithm(args.algorithm, graph, options)

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("kind", "id", "score"))
    quality = result.rescaled_quality(scale) if args.rescale else result.quality
    for item, q in zip(result.item_ids, quality.tolist()):
        w.writerow(("item", item, repr(q)))
    if result.reputation is not None:
        for user, r in zip(result.user_ids, result.reputation.tolist()):
            w.writerow(("user", user, repr(r)))
    diag = {
        "algorithm": result.algorithm,
        "converged": result.converged,
        "iterations": result.iterations,
        "config": result.config,
        "diagnostics": result.diagnostics,
    }
    diag_text = json.dumps(diag, indent=2, sort_keys=True, default=str) + "\n"
    if args.out:
        atomic_write(args.out, buf.getvalue())
        atomic_write(args.diagnostics or f"{args.out}.diagnostics.json", diag_text)
    else:
        sys.stdout.write(buf.getvalue())
        if args.diagnostics:
            atomic_write(args.diagnostics, diag_text)
        else:
            sys.stderr.write(diag_text)
    if not result.converged:
        log.error("%s did not converge; scores written with converged=false", args.algorithm)
        return 1
    return 0


def _read_result(path: str) -> dict[str, float]:
    scores = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != ("kind", "id", "score"):
            raise ParseError("expected header kind,id,score", 1)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise ParseError("expected 3 fields", lineno)
            if row[0] == "item":
                scores[row[1]] = float(row[2])
    if not scores:
        raise ParseError("result file has no item rows")
    return scores


def cmd_evaluate(args) -> int:
    _check_readable(args.result, args.truth, args.truth_qualities)
    scores = _read_result(args.result)
    if args.truth:
        with open(args.truth, encoding="utf-8") as fh:
            truth = load_ground_truth(fh).positives()
    else:
        with open(args.truth_qualities, encoding="utf-8", newline="") as fh:
            truth = load_true_qualities(fh).positives(args.top_fraction)
    truth = {a for a in truth if a in scores}
    mode, n, seed = parse_auc_mode(args.auc_mode)
    ranked = sorted(scores, key=lambda a: (-scores[a], a))
    rep = evaluate_ranking(scores, ranked, truth, args.f, mode, n, seed)
    doc = {
        "result": args.result,
        "n_items": len(scores),
        "n_positives": len(truth),
        "f_percent": rep.cutoff_f_percent,
        "cutoff": rep.cutoff,
        "m": rep.m,
        "auc": rep.auc,
        "auc_mode": args.auc_mode,
        "precision": rep.precision,
        "recall": rep.recall,
        "f_value": rep.f_value,
    }
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    rows = io.StringIO()
    w = csv.writer(rows, lineterminator="\n")
    w.writerow(("metric", "value"))
    for key in ("m", "auc", "precision", "recall", "f_value"):
        w.writerow((key, repr(doc[key]) if isinstance(doc[key], float) else doc[key]))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        atomic_write(out / "evaluation.json", text)
        atomic_write(out / "evaluation.csv", rows.getvalue())
    else:
        sys.stdout.write(text)
    return 0


_PLAN_FLAGS = {
    "input": "input",
    "truth": "truth",
    "truth_qualities": "truth_qualities",
    "algorithms": "algorithms",
    "auc_mode": "auc_mode",
    "dedupe": "dedupe",
    "time_unit": "time_unit",
    "spammers": "spammers",
    "samples": "samples",
    "ratings_per_spammer": "ratings_per_spammer",
    "max_cells": "max_cells",
    "horizons": "horizons",
    "sweep_f": "sweep_f",
    "f": "f",
}


def _settings(args) -> tuple[dict[str, Any], Path | None]:
    settings: dict[str, Any] = {}
    base = None
    if args.plan:
        _check_readable(args.plan)
        settings.update(read_plan_file(args.plan))
        base = Path(args.plan).parent
    for attr, key in _PLAN_FLAGS.items():
        value = getattr(args, attr, None)
        if value is not None:
            settings[key] = str(value)
    if args.jobs is not None:
        settings["jobs"] = str(args.jobs)
    if args.seed is not None:
        settings["seed"] = str(args.seed)
    elif "seed" not in settings:
        settings["seed"] = str(secrets.randbits(32))
        log.warning("no --seed given; using random seed %s", settings["seed"])
    # CLI paths are relative to the working directory, plan paths to the plan file
    for key in ("input", "truth", "truth_qualities"):
        if getattr(args, key, None) is not None:
            settings[key] = str(Path(getattr(args, key)).resolve())
    if "input" not in settings:
        raise UsageError("an --input rating file is required (flag or plan file)")
    if settings.get("truth") and settings.get("truth_qualities"):
        raise UsageError("give either truth or truth_qualities, not both")
    return settings, base


def _run_experiment(args, runner, stem: str) -> int:
    settings, base = _settings(args)
    try:
        plan = load_plan(settings, base)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from None
    log.info("effective configuration: %s", json.dumps({"command": args.command, **settings}, sort_keys=True))
    fmt = (args.format or settings.get("format") or "csv,json").split(",")
    report = runner(plan)
    paths = emit_report(report, fmt, _out_dir(args, "report"), stem)
    for p in paths:
        print(p)
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.version:
        print(json.dumps({"name": "atrank", "version": __version__}))
        return 0
    if not args.command:
        parser.print_usage(sys.stderr)
        return 2
    _setup_logging(args)
    if args.seed is None and args.command == "synth":
        args.seed = secrets.randbits(32)
        log.warning("no --seed given; using random seed %d", args.seed)
    handlers = {
        "ingest": cmd_ingest,
        "synth": cmd_synth,
        "rank": cmd_rank,
        "evaluate": cmd_evaluate,
        "robustness": lambda a: _run_experiment(a, run_robustness, "robustness"),
        "year-sweep": lambda a: _run_experiment(a, run_year_sweep, "year_sweep"),
        "report": lambda a: _run_experiment(a, run_identification, "identification"),
    }
    try:
        return handlers[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"atrank: error: {exc}", file=sys.stderr)
        return 2
    except DOMAIN_ERRORS as exc:
        print(f"atrank: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"atrank: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
