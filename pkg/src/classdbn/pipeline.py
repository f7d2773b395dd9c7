"""End-to-end run: data -> resample -> split -> select -> DBN + classifiers -> horizons."""

from __future__ import annotations

import copy
import json
import logging
import time
from dataclasses import fields
from pathlib import Path
from typing import Any, Mapping

from .balance import SmoteConfig, smote
from .classify import TrainConfig, fit_hcsp, train_mlp
from .cohort import (
    Cohort,
    FeatureSchema,
    GeneratorConfig,
    build_transitions,
    ingest_csv,
    resample,
    stratified_split_ids,
    synthetic_observations,
)
from .dbn import DbnModel, SearchResult, fit_parameters, hill_climb
from .errors import ConfigError, DataError, StageError
from .evaluate import EvaluationReport, horizon_eval, inference_latency
from .seeding import derive_seed
from .select import ImportanceReport, rf_importance, select_features
from .tune import DeConfig, ParamSpace, TuneResult, tune_classifier

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

log = logging.getLogger(__name__)

CLASSIFIERS = ("mlp", "hcsp")
SECTIONS = ("generator", "input", "preprocess", "select", "dbn", "classifier", "smote", "tune", "evaluate", "output")

DEFAULT_SPACES = {
    "mlp": {
        "learning_rate": [1e-4, 3e-2, "log-real"],
        "batch_size": [16, 256, "integer"],
        "epochs": [10, 80, "integer"],
    },
    "hcsp": {"bins": [2, 6, "integer"], "folds": [3, 8, "integer"]},
}


def load_config(path) -> dict:
    with open(path, "rb") as fh:
        try:
            return tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None


def _dataclass_kwargs(cls, section: Mapping, where: str) -> dict:
    allowed = {f.name for f in fields(cls)}
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"[{where}] unknown keys: {sorted(unknown)}")
    return dict(section)


def validate_config(config: Mapping, base_dir: Path | None = None) -> dict:
    """Check the configuration before any computation; returns a normalized copy."""
    cfg = copy.deepcopy(dict(config))
    unknown = set(cfg) - set(SECTIONS) - {"seed"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    has_gen, has_input = "generator" in cfg, "input" in cfg
    if has_gen == has_input:
        raise ConfigError("config needs exactly one data source: [generator] or [input]")
    if has_gen:
        GeneratorConfig(**_dataclass_kwargs(GeneratorConfig, cfg["generator"], "generator")).validate()
    else:
        inp = cfg["input"]
        base = base_dir or Path.cwd()
        for key in ("path", "schema"):
            if key not in inp:
                raise ConfigError(f"[input] needs '{key}'")
            p = Path(inp[key])
            if not p.is_absolute():
                p = base / p
            if not p.exists():
                raise ConfigError(f"[input] {key} not found: {p}")
            inp[key] = str(p)
    pre = cfg.setdefault("preprocess", {})
    pre.setdefault("period_hours", 4.0)
    pre.setdefault("train_fraction", 0.8)
    if not 0 < pre["train_fraction"] < 1:
        raise ConfigError("[preprocess] train_fraction must lie in (0, 1)")
    sel = cfg.setdefault("select", {})
    sel.setdefault("enabled", True)
    if sel["enabled"] and "k_blood" not in sel:
        raise ConfigError("[select] k_blood is required when selection is enabled")
    sel.setdefault("n_trees", 100)
    sel.setdefault("max_depth", 8)
    dbn = cfg.setdefault("dbn", {})
    dbn.setdefault("max_parents", 5)
    dbn.setdefault("restarts", 1)
    clf = cfg.setdefault("classifier", {})
    kinds = clf.setdefault("kinds", ["mlp"])
    bad = [k for k in kinds if k not in CLASSIFIERS]
    if bad or not kinds:
        raise ConfigError(f"[classifier] kinds must be a non-empty subset of {CLASSIFIERS}, got {kinds}")
    if "mlp" in clf:
        TrainConfig(**_dataclass_kwargs(TrainConfig, clf["mlp"], "classifier.mlp"))
    sm = cfg.setdefault("smote", {})
    sm.setdefault("enabled", True)
    SmoteConfig(**{k: v for k, v in sm.items() if k != "enabled"})
    tn = cfg.setdefault("tune", {})
    tn.setdefault("enabled", False)
    tn.setdefault("validation_fraction", 0.25)
    tn.setdefault("max_generations", 50)
    for kind, space in tn.get("space", {}).items():
        ParamSpace.from_mapping(space)
    ev = cfg.setdefault("evaluate", {})
    ev.setdefault("horizon", 10)
    ev.setdefault("first_slice_only", False)
    if ev["horizon"] < 1:
        raise ConfigError("[evaluate] horizon must be >= 1")
    return cfg


def _load_schema(path) -> FeatureSchema:
    return FeatureSchema.from_dict(json.loads(Path(path).read_text()))


def load_observations(cfg: Mapping, master: int):
    """Schema and raw observations from the generator or the CSV input."""
    if "generator" in cfg:
        gen = GeneratorConfig(**cfg["generator"])
        schema, obs, _ = synthetic_observations(gen, derive_seed(master, "generator"))
        return schema, obs
    schema = _load_schema(cfg["input"]["schema"])
    return schema, ingest_csv(cfg["input"]["path"], schema)


def split_and_resample(schema, obs, cfg: Mapping, master: int) -> tuple[Cohort, Cohort]:
    """Split raw observations by patient, then resample each side.

    The test side is imputed with fallback means learned on the train side.
    """
    labels: dict[str, bool] = {}
    for o in obs:
        labels[o.patient_id] = labels.get(o.patient_id, False) or o.outcome_critical
    ids = sorted(labels)
    pre = cfg["preprocess"]
    train_ids, _ = stratified_split_ids(ids, [labels[i] for i in ids], pre["train_fraction"], derive_seed(master, "split"))
    chosen = set(train_ids)
    train_obs = [o for o in obs if o.patient_id in chosen]
    test_obs = [o for o in obs if o.patient_id not in chosen]
    train = resample(train_obs, schema, pre["period_hours"])
    test = resample(test_obs, schema, pre["period_hours"], fallback_means=train.schema.fallback_means)
    overlap = {p.patient_id for p in train.patients} & {p.patient_id for p in test.patients}
    if overlap:
        raise DataError(f"patients in both splits: {sorted(overlap)[:5]}")
    return train, test


def select_stage(train: Cohort, cfg: Mapping, master: int, threads: int = 1) -> tuple[ImportanceReport, FeatureSchema]:
    sel = cfg["select"]
    x, y, _ = train.slice_matrix()
    report = rf_importance(
        x, y, sel["n_trees"], sel["max_depth"], sel.get("mtry") or None,
        derive_seed(master, "select"), train.schema.names, n_jobs=threads,
    )
    return report, select_features(report, train.schema, int(sel["k_blood"]))


def dbn_stage(train: Cohort, cfg: Mapping, master: int) -> tuple[DbnModel, SearchResult]:
    data = build_transitions(train)
    search = hill_climb(data, cfg["dbn"]["max_parents"], cfg["dbn"]["restarts"], derive_seed(master, "dbn"))
    return fit_parameters(search.structure, data, cfg["preprocess"]["period_hours"]), search


def _mlp_config(base: Mapping, params: Mapping, seed: int) -> TrainConfig:
    names = {f.name for f in fields(TrainConfig)}
    merged = {**base, **{k: v for k, v in params.items() if k in names}}
    merged["seed"] = seed
    return TrainConfig(**merged)


def make_trainer(kind: str, cfg: Mapping, seed: int, schema_hash: str):
    """``trainer(params, X, y) -> Classifier`` for the tuning objective and final fit."""
    base = dict(cfg["classifier"].get(kind, {}))
    if kind == "mlp":
        def trainer(params, X, y):
            return train_mlp(X, y, _mlp_config(base, params, seed), schema_hash)
    else:
        def trainer(params, X, y):
            p = {**base, **params}
            return fit_hcsp(X, y, int(p.get("bins", 3)), int(p.get("folds", 5)), seed, schema_hash)
    return trainer


def smote_config(cfg: Mapping, seed: int) -> SmoteConfig | None:
    sm = cfg["smote"]
    if not sm["enabled"]:
        return None
    return SmoteConfig(**{**{k: v for k, v in sm.items() if k != "enabled"}, "seed": seed})


def balanced_training_set(train: Cohort, cfg: Mapping, seed: int, held_out: set[str] | frozenset = frozenset()):
    """Slice matrix of the train cohort, rebalanced when SMOTE is enabled.

    ``held_out`` ids (the test patients) must not reach the oversampler.
    """
    x, y, provenance = train.slice_matrix()
    leaked = {pid for pid, _ in provenance} & set(held_out)
    if leaked:
        raise DataError(f"test patients reached the oversampling input: {sorted(leaked)[:5]}")
    sc = smote_config(cfg, seed)
    if sc is None:
        return x, y
    res = smote(x, y, sc)
    return res.X, res.y


def tune_stage(kind: str, train: Cohort, cfg: Mapping, master: int) -> TuneResult:
    """DE search on a patient-level validation split carved from the train cohort."""
    tn = cfg["tune"]
    ids = [p.patient_id for p in train.patients]
    fit_ids, _ = stratified_split_ids(
        ids, train.labels, 1.0 - tn["validation_fraction"], derive_seed(master, f"tune_split_{kind}")
    )
    chosen = set(fit_ids)
    fit_part = Cohort(train.schema, tuple(p for p in train.patients if p.patient_id in chosen))
    val_part = Cohort(train.schema, tuple(p for p in train.patients if p.patient_id not in chosen))
    xf, yf, _ = fit_part.slice_matrix()
    xv, yv, _ = val_part.slice_matrix()
    space = ParamSpace.from_mapping(tn.get("space", {}).get(kind, DEFAULT_SPACES[kind]))
    de = DeConfig(
        population_size=int(tn.get("population_size", 10 * len(space))),
        weight=float(tn.get("weight", 0.8)),
        crossover=float(tn.get("crossover", 0.9)),
        max_generations=int(tn["max_generations"]),
        seed=derive_seed(master, f"tune_{kind}"),
    )
    trainer = make_trainer(kind, cfg, derive_seed(master, kind), train.schema.digest())
    res = tune_classifier(
        trainer, (xf, yf), (xv, yv), space, de, smote_config(cfg, derive_seed(master, f"tune_smote_{kind}"))
    )
    log.info("tuned %s: %s (validation g-mean %.3f)", kind, res.best_params, res.best_g_mean)
    return res


def train_stage(kind: str, train: Cohort, cfg: Mapping, master: int, params: Mapping | None = None, held_out=frozenset()):
    x, y = balanced_training_set(train, cfg, derive_seed(master, f"smote_{kind}"), held_out)
    trainer = make_trainer(kind, cfg, derive_seed(master, kind), train.schema.digest())
    return trainer(dict(params or {}), x, y)


def merge_tuned(cfg: Mapping, tuned: Mapping[str, Mapping]) -> dict:
    """Copy of ``cfg`` with tuned hyperparameters written into ``[classifier.<kind>]``."""
    out = copy.deepcopy(dict(cfg))
    for kind, params in tuned.items():
        out.setdefault("classifier", {}).setdefault(kind, {}).update(params)
    return out


def run_pipeline(config: Mapping, seed: int, out_dir=None, threads: int = 1, base_dir=None) -> EvaluationReport:
    """Run every stage; stage seeds derive from ``seed`` by name.

    A failing stage raises :class:`StageError`; when ``out_dir`` is given the
    artifacts finished so far are written to ``partial.json`` first.
    """
    cfg = validate_config(config, Path(base_dir) if base_dir else None)
    master = int(seed)
    timings: dict[str, float] = {}
    seeds: dict[str, int] = {}
    state: dict[str, Any] = {}
    diagnostics: dict[str, Any] = {}

    def stage(name, fn):
        seeds[name] = derive_seed(master, name)
        t0 = time.perf_counter()
        try:
            out = fn()
        except Exception as exc:
            if out_dir is not None:
                _flush_partial(out_dir, name, exc, state, timings)
            raise StageError(name, exc) from exc
        timings[name] = time.perf_counter() - t0
        log.info("stage %s done in %.2fs", name, timings[name])
        return out

    schema, obs = stage("data", lambda: load_observations(cfg, master))
    train, test = stage("resample", lambda: split_and_resample(schema, obs, cfg, master))
    diagnostics["train_patients"], diagnostics["test_patients"] = len(train), len(test)
    test_ids = frozenset(p.patient_id for p in test.patients)

    if cfg["select"]["enabled"] and train.schema.indices("blood"):
        importance, chosen = stage("select", lambda: select_stage(train, cfg, master, threads))
        state["importance"] = importance.to_dict()
        train, test = train.project(chosen), test.project(chosen)
    diagnostics["features"] = train.schema.names

    dbn, search = stage("dbn", lambda: dbn_stage(train, cfg, master))
    state["dbn"] = dbn.to_dict()
    diagnostics["dbn_arcs"] = len(dbn.structure.arcs)
    diagnostics["dbn_score"] = search.score

    results = {}
    tuned: dict[str, dict] = {}
    ev = cfg["evaluate"]
    for kind in cfg["classifier"]["kinds"]:
        if cfg["tune"]["enabled"]:
            res = stage(f"tune_{kind}", lambda: tune_stage(kind, train, cfg, master))
            tuned[kind] = dict(res.best_params)
            diagnostics[f"{kind}_validation_g_mean"] = res.best_g_mean
        clf = stage(f"train_{kind}", lambda: train_stage(kind, train, cfg, master, tuned.get(kind), test_ids))
        state.setdefault("classifiers", {})[kind] = clf.to_dict()
        results[kind] = stage(
            f"evaluate_{kind}", lambda: horizon_eval(dbn, clf, test, ev["horizon"], ev["first_slice_only"])
        )
        diagnostics[f"{kind}_inference_seconds_per_patient"] = inference_latency(dbn, clf, test, ev["horizon"])
        diagnostics[f"{kind}_excluded_starts"] = max(r.excluded for r in results[kind])

    snapshot = merge_tuned(cfg, tuned)
    snapshot["seed"] = master
    report = EvaluationReport(
        results=results,
        seed=master,
        config=snapshot,
        seeds=seeds,
        timings=timings,
        diagnostics=diagnostics,
        dbn=state["dbn"],
    )
    report.artifacts = state
    return report


def _flush_partial(out_dir, stage_name, exc, state, timings) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = {"failed_stage": stage_name, "error": str(exc), "completed": state, "timings": timings}
    (out / "partial.json").write_text(json.dumps(payload, indent=1, default=str))
