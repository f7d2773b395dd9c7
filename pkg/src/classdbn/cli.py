"""Command-line entry point: ``classdbn <subcommand> [flags]``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from datetime import datetime
from pathlib import Path

import numpy as np
import tomli_w

from . import pipeline
from .classify import load_classifier, save_classifier
from .cohort import FeatureSchema, load_cohort, save_cohort, write_observations_csv
from .dbn import export_dot, forecast, load_model, neighborhood, save_model
from .errors import ConfigError, DataError, NumericError, StageError
from .evaluate import EvaluationReport, emit_report, horizon_eval, inference_latency, load_report
from .tune import write_trace_csv

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("classdbn")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common(p: argparse.ArgumentParser, config: bool = True) -> None:
    if config:
        p.add_argument("--config", type=Path, help="pipeline TOML file")
    p.add_argument("--seed", type=int, default=0, help="master seed; every stage seed derives from it (default 0)")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory (default ./out)")
    p.add_argument("--threads", type=int, default=1, help="cap on worker threads (default 1)")
    p.add_argument("--first-slice-only", action="store_true", help="evaluate from each patient's first slice only")
    p.add_argument("-v", "--verbose", action="store_true", help="log stage progress to stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="classdbn", description="Forecast patient state with a DBN, then classify the forecasts.")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("generate", help="write a synthetic cohort as observations.csv + schema.json")
    _common(p)
    p = sub.add_parser("preprocess", help="split by patient and resample to train/test cohort files")
    _common(p)
    p = sub.add_parser("select", help="rank features by forest importance and keep the top blood features")
    _common(p)
    p = sub.add_parser("tune", help="DE search for classifier hyperparameters; writes tuned.toml")
    _common(p)
    p = sub.add_parser("train", help="learn the DBN and the configured classifiers")
    _common(p)
    p = sub.add_parser("evaluate", help="horizon evaluation of trained models on the test cohort")
    _common(p)

    p = sub.add_parser("forecast", help="print a trajectory forecast from one state row")
    _common(p, config=False)
    p.add_argument("--model", type=Path, help="DBN model JSON (default <out>/dbn.json)")
    p.add_argument("--row", help="comma-separated state values in model feature order")
    p.add_argument("--csv", type=Path, help="CSV file; the first data row is used (header optional)")
    p.add_argument("--horizon", type=int, default=10, help="number of steps to forecast (default 10)")

    p = sub.add_parser("explain", help="DOT neighborhood of one feature in a trained DBN")
    _common(p, config=False)
    p.add_argument("feature", help="feature name, e.g. spo2_max")
    p.add_argument("--model", type=Path, help="DBN model JSON (default <out>/dbn.json)")
    p.add_argument("--lagged", action="store_true", help="center on the t0 node instead of t1")
    p.add_argument("--dot", type=Path, help="also write the DOT text to this file")

    p = sub.add_parser("report", help="re-emit metrics.csv, horizon.svg and graph.dot from a report.json")
    _common(p, config=False)
    p.add_argument("--report", type=Path, help="report JSON (default <out>/report.json)")

    p = sub.add_parser("run", help="the whole pipeline into <out>/run_<timestamp>_seed<seed>")
    _common(p)
    return parser


# -- helpers ----------------------------------------------------------------


def _config(args) -> dict:
    if args.config is None:
        raise ConfigError("--config is required for this command")
    if not args.config.exists():
        raise ConfigError(f"config file not found: {args.config}")
    raw = pipeline.load_config(args.config)
    if args.first_slice_only:
        raw.setdefault("evaluate", {})["first_slice_only"] = True
    return pipeline.validate_config(raw, args.config.resolve().parent)


def _toml_ready(obj):
    if isinstance(obj, dict):
        return {str(k): _toml_ready(v) for k, v in obj.items() if v is not None}
    if isinstance(obj, (list, tuple)):
        return [_toml_ready(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def write_toml(cfg: dict, path: Path) -> None:
    path.write_text(tomli_w.dumps(_toml_ready(cfg)))


def _cohorts(out: Path):
    for name in ("train_cohort.json", "test_cohort.json"):
        if not (out / name).exists():
            raise DataError(f"{out / name} not found; run 'preprocess' first")
    train, test = load_cohort(out / "train_cohort.json"), load_cohort(out / "test_cohort.json")
    selected = out / "selected_schema.json"
    if selected.exists():
        schema = FeatureSchema.from_dict(json.loads(selected.read_text()))
        train, test = train.project(schema), test.project(schema)
    return train, test


def _parse_row(args, n: int, names: list[str]) -> np.ndarray:
    if (args.row is None) == (args.csv is None):
        raise UsageError("forecast needs exactly one of --row or --csv")
    if args.row is not None:
        cells = [c.strip() for c in args.row.split(",")]
    else:
        with open(args.csv, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r]
        if not rows:
            raise DataError(f"{args.csv}: no rows")
        if rows[0] and rows[0][0].strip() in names and len(rows) > 1:
            header = [h.strip() for h in rows[0]]
            unknown = [h for h in header if h not in names]
            if unknown:
                raise DataError(f"{args.csv}: unknown columns {unknown}")
            by_name = dict(zip(header, rows[1]))
            missing = [m for m in names if m not in by_name]
            if missing:
                raise DataError(f"{args.csv}: expected {n} features, missing {missing}")
            cells = [by_name[m] for m in names]
        else:
            cells = rows[0]
    if len(cells) != n:
        raise DataError(f"expected {n} feature values ({', '.join(names)}), got {len(cells)}")
    try:
        return np.array([float(c) for c in cells])
    except ValueError as exc:
        raise DataError(f"non-numeric state value: {exc}") from None


# -- subcommands ------------------------------------------------------------


def cmd_generate(args) -> None:
    cfg = _config(args)
    if "generator" not in cfg:
        raise ConfigError("'generate' needs a [generator] section")
    schema, obs = pipeline.load_observations(cfg, args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    write_observations_csv(obs, schema, args.out / "observations.csv")
    (args.out / "schema.json").write_text(json.dumps(schema.to_dict(), indent=1))
    n = len({o.patient_id for o in obs})
    print(f"wrote {len(obs)} observations for {n} patients to {args.out}")


def cmd_preprocess(args) -> None:
    cfg = _config(args)
    schema, obs = pipeline.load_observations(cfg, args.seed)
    train, test = pipeline.split_and_resample(schema, obs, cfg, args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    save_cohort(train, args.out / "train_cohort.json")
    save_cohort(test, args.out / "test_cohort.json")
    print(f"train: {len(train)} patients, test: {len(test)} patients")


def cmd_select(args) -> None:
    cfg = _config(args)
    if not cfg["select"]["enabled"]:
        raise ConfigError("[select] is disabled in this config")
    train, _ = _cohorts(args.out)
    report, chosen = pipeline.select_stage(train, cfg, args.seed, args.threads)
    report.save(args.out / "importance.json")
    (args.out / "selected_schema.json").write_text(json.dumps(chosen.to_dict(), indent=1))
    print(report.table())
    print(f"kept: {', '.join(chosen.names)}")


def cmd_tune(args) -> None:
    cfg = _config(args)
    train, _ = _cohorts(args.out)
    tuned = {}
    for kind in cfg["classifier"]["kinds"]:
        res = pipeline.tune_stage(kind, train, cfg, args.seed)
        write_trace_csv(res.trace, args.out / f"tune_{kind}.csv")
        tuned[kind] = dict(res.best_params)
        print(f"{kind}: {res.best_params} (validation g-mean {res.best_g_mean:.4f})")
    merged = pipeline.merge_tuned(cfg, tuned)
    merged["tune"]["enabled"] = False
    write_toml(merged, args.out / "tuned.toml")
    print(f"wrote {args.out / 'tuned.toml'}")


def cmd_train(args) -> None:
    cfg = _config(args)
    train, test = _cohorts(args.out)
    dbn, search = pipeline.dbn_stage(train, cfg, args.seed)
    save_model(dbn, args.out / "dbn.json")
    print(f"dbn: {len(dbn.structure.arcs)} arcs, BIC {search.score:.3f}")
    held_out = frozenset(p.patient_id for p in test.patients)
    for kind in cfg["classifier"]["kinds"]:
        clf = pipeline.train_stage(kind, train, cfg, args.seed, held_out=held_out)
        save_classifier(clf, args.out / f"{kind}.json")
        print(f"{kind}: saved {args.out / f'{kind}.json'}")


def cmd_evaluate(args) -> None:
    cfg = _config(args)
    _, test = _cohorts(args.out)
    dbn = load_model(args.out / "dbn.json")
    ev = cfg["evaluate"]
    results, diagnostics = {}, {}
    for kind in cfg["classifier"]["kinds"]:
        clf = load_classifier(args.out / f"{kind}.json", test.schema.digest())
        results[kind] = horizon_eval(dbn, clf, test, ev["horizon"], ev["first_slice_only"])
        diagnostics[f"{kind}_inference_seconds_per_patient"] = inference_latency(dbn, clf, test, ev["horizon"])
    report = EvaluationReport(results, args.seed, {**cfg, "seed": args.seed}, diagnostics=diagnostics, dbn=dbn.to_dict())
    emit_report(report, args.out)
    _print_results(report)


def cmd_forecast(args) -> None:
    model = load_model(args.model or args.out / "dbn.json")
    names = model.schema.names
    s0 = _parse_row(args, len(names), names)
    traj = forecast(model, s0, args.horizon)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["hours", *names])
    w.writerow([0.0, *(f"{v:.6g}" for v in s0)])
    for h, state in zip(traj.hours, traj.states):
        w.writerow([h, *(f"{v:.6g}" for v in state)])


def cmd_explain(args) -> None:
    model = load_model(args.model or args.out / "dbn.json")
    if args.feature not in model.schema.names:
        raise DataError(f"unknown feature {args.feature!r}; model has {', '.join(model.schema.names)}")
    dot = export_dot(neighborhood(model, args.feature, lagged=args.lagged), name=f"{args.feature}_neighborhood")
    sys.stdout.write(dot)
    if args.dot:
        args.dot.write_text(dot)


def cmd_report(args) -> None:
    path = args.report or args.out / "report.json"
    if not Path(path).exists():
        raise DataError(f"report not found: {path}")
    report = load_report(path)
    paths = emit_report(report, args.out)
    _print_results(report)
    print("wrote " + ", ".join(str(p) for p in paths.values()))


def run_dir(out: Path, seed: int) -> Path:
    stamp = datetime.now().strftime("%Y%m%dT%H%M%S")
    path = out / f"run_{stamp}_seed{seed}"
    k = 1
    while path.exists():
        path = out / f"run_{stamp}_seed{seed}_{k}"
        k += 1
    return path


def cmd_run(args) -> None:
    cfg = _config(args)
    target = run_dir(args.out, args.seed)
    report = pipeline.run_pipeline(cfg, args.seed, out_dir=target, threads=args.threads)
    emit_report(report, target)
    write_toml(report.config, target / "config.toml")
    (target / "dbn.json").write_text(json.dumps(report.dbn))
    for kind, d in report.artifacts.get("classifiers", {}).items():
        (target / f"{kind}.json").write_text(json.dumps(d))
    if "importance" in report.artifacts:
        (target / "importance.json").write_text(json.dumps(report.artifacts["importance"], indent=1))
    _print_results(report)
    print(f"run directory: {target}")


def _print_results(report: EvaluationReport) -> None:
    for kind, results in report.results.items():
        print(f"{kind}:  hours  accuracy  g_mean")
        for r in results:
            print(f"{'':{len(kind)}}  {r.horizon_hours:5.0f}  {r.accuracy:8.4f}  {r.g_mean:6.4f}")


COMMANDS = {
    "generate": cmd_generate,
    "preprocess": cmd_preprocess,
    "select": cmd_select,
    "tune": cmd_tune,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "forecast": cmd_forecast,
    "explain": cmd_explain,
    "report": cmd_report,
    "run": cmd_run,
}


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, StageError):
        return _exit_code(exc.cause)
    if isinstance(exc, (UsageError, ConfigError)):
        return EXIT_USAGE
    if isinstance(exc, NumericError):
        return EXIT_NUMERIC
    if isinstance(exc, (DataError, OSError, KeyError, json.JSONDecodeError)):
        return EXIT_DATA
    raise exc


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
        COMMANDS[args.command](args)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except Exception as exc:
        code = _exit_code(exc)
        message = str(exc) if isinstance(exc, UsageError) else f"classdbn: {exc}"
        print(message, file=sys.stderr)
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
