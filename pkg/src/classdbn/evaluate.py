"""Forecast-then-classify evaluation across horizons, and report files."""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence
from xml.sax.saxutils import escape

import numpy as np

from .cohort import Cohort
from .dbn import DbnModel, export_dot, forecast, forecast_batch
from .errors import DataError, SchemaError
from .tune import ConfusionMatrix, metrics

# Mean accuracy / g-mean / train hours / exec seconds published for the
# original private hospital cohort; shown for context, never asserted.
PUBLISHED_REFERENCE = {
    "note": "reported on a private clinical cohort; not reproducible with synthetic data",
    "reproducible": False,
    "columns": ["accuracy", "g_mean", "train_h", "exec_s"],
    "rows": {
        "XGBoost": [0.698, 0.455, 1.950, 9.634],
        "SVM": [0.735, 0.522, 1.145, 9.654],
        "NN": [0.771, 0.541, 1.384, 9.863],
        "HCSP": [0.736, 0.468, 1.046, 9.878],
    },
}

CSV_COLUMNS = ["classifier", "horizon_steps", "horizon_hours", "tp", "fp", "tn", "fn", "accuracy", "g_mean"]


@dataclass(frozen=True)
class HorizonResult:
    horizon_steps: int
    horizon_hours: float
    confusion: ConfusionMatrix
    accuracy: float
    g_mean: float
    recall: float = 0.0
    specificity: float = 0.0
    excluded: int = 0

    @classmethod
    def build(cls, steps: int, period_hours: float, cm: ConfusionMatrix, excluded: int = 0) -> "HorizonResult":
        if cm.total == 0:
            return cls(steps, steps * period_hours, cm, 0.0, 0.0, 0.0, 0.0, excluded)
        m = metrics(cm)
        return cls(steps, steps * period_hours, cm, m.accuracy, m.g_mean, m.recall, m.specificity, excluded)

    def to_dict(self) -> dict:
        return {
            "horizon_steps": self.horizon_steps,
            "horizon_hours": self.horizon_hours,
            "confusion": self.confusion.to_dict(),
            "accuracy": self.accuracy,
            "g_mean": self.g_mean,
            "recall": self.recall,
            "specificity": self.specificity,
            "excluded": self.excluded,
        }

    @classmethod
    def from_dict(cls, d) -> "HorizonResult":
        return cls(
            int(d["horizon_steps"]),
            float(d["horizon_hours"]),
            ConfusionMatrix(**d["confusion"]),
            float(d["accuracy"]),
            float(d["g_mean"]),
            float(d.get("recall", 0.0)),
            float(d.get("specificity", 0.0)),
            int(d.get("excluded", 0)),
        )


def start_points(test: Cohort, first_slice_only: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Every test slice (or only each patient's first) with the patient label."""
    if first_slice_only:
        x = np.array([p.slices[0] for p in test.patients])
        y = test.labels
        return x.reshape(len(test), len(test.schema)), y
    x, y, _ = test.slice_matrix()
    return x, y


def horizon_eval(
    dbn: DbnModel, clf, test: Cohort, horizon: int = 10, first_slice_only: bool = False
) -> list[HorizonResult]:
    """Classify each start slice directly (h=0) and after h=1..horizon DBN steps.

    Predictions at every horizon are scored against the patient's outcome.
    Starts whose forecast goes non-finite are left out from that step on and
    counted in ``excluded``.
    """
    if horizon < 1:
        raise DataError("horizon must be >= 1")
    if len(test) == 0:
        raise DataError("test cohort is empty")
    if test.schema.names != dbn.schema.names:
        raise SchemaError("test cohort and DBN use different feature sets")
    x, y = start_points(test, first_slice_only)
    results = [HorizonResult.build(0, dbn.period_hours, ConfusionMatrix.from_predictions(y, clf.predict(x)))]
    paths, ok = forecast_batch(dbn, x, horizon)
    for h in range(1, horizon + 1):
        keep = ok[h - 1]
        if keep.any():
            cm = ConfusionMatrix.from_predictions(y[keep], clf.predict(paths[h - 1][keep]))
        else:
            cm = ConfusionMatrix(0, 0, 0, 0)
        results.append(HorizonResult.build(h, dbn.period_hours, cm, int((~keep).sum())))
    return results


def inference_latency(dbn: DbnModel, clf, test: Cohort, horizon: int = 10, n_patients: int = 100) -> float:
    """Mean seconds to forecast ``horizon`` steps and classify all ``horizon + 1`` states, per patient."""
    patients = test.patients[:n_patients]
    if not patients:
        raise DataError("no patients to time")
    elapsed = 0.0
    for p in patients:
        t0 = time.perf_counter()
        traj = forecast(dbn, p.slices[0], horizon)
        states = np.vstack([p.slices[:1], traj.states])
        for s in states:
            clf.predict_proba(s)
        elapsed += time.perf_counter() - t0
    return elapsed / len(patients)


@dataclass
class EvaluationReport:
    results: dict[str, list[HorizonResult]]
    seed: int
    config: Mapping
    seeds: dict[str, int] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    dbn: dict | None = None
    reference: dict = field(default_factory=lambda: dict(PUBLISHED_REFERENCE))

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "seeds": self.seeds,
            "config": self.config,
            "results": {k: [r.to_dict() for r in v] for k, v in self.results.items()},
            "diagnostics": self.diagnostics,
            "timings": self.timings,
            "dbn": self.dbn,
            "reference": self.reference,
        }

    @classmethod
    def from_dict(cls, d) -> "EvaluationReport":
        return cls(
            results={k: [HorizonResult.from_dict(r) for r in v] for k, v in d["results"].items()},
            seed=int(d["seed"]),
            config=d["config"],
            seeds=d.get("seeds", {}),
            timings=d.get("timings", {}),
            diagnostics=d.get("diagnostics", {}),
            dbn=d.get("dbn"),
            reference=d.get("reference", dict(PUBLISHED_REFERENCE)),
        )

    def digest(self) -> str:
        """SHA-256 of the report with wall-clock timings removed."""
        d = self.to_dict()
        d.pop("timings")
        d["diagnostics"] = {k: v for k, v in d["diagnostics"].items() if "seconds" not in k}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    def metric_rows(self) -> list[list]:
        rows = []
        for name, results in self.results.items():
            for r in results:
                c = r.confusion
                rows.append([name, r.horizon_steps, r.horizon_hours, c.tp, c.fp, c.tn, c.fn, r.accuracy, r.g_mean])
        return rows


def load_report(path) -> EvaluationReport:
    return EvaluationReport.from_dict(json.loads(Path(path).read_text()))


_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def horizon_svg(results: Mapping[str, Sequence[HorizonResult]], width: int = 900, height: int = 360) -> str:
    """Two side-by-side panels (accuracy, g-mean) against forecast hours."""
    max_hours = max((r.horizon_hours for rs in results.values() for r in rs), default=40.0) or 40.0
    panel_w, top, bottom, left = (width - 60) / 2, 40, height - 50, 50
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        '<rect width="100%" height="100%" fill="white"/>',
    ]
    for k, metric in enumerate(("accuracy", "g_mean")):
        x0 = left + k * (panel_w + 20)
        x1 = x0 + panel_w - 30

        def px(hours):
            return x0 + (x1 - x0) * hours / max_hours

        def py(v):
            return bottom - (bottom - top) * v

        out.append(f'<g class="panel" id="{metric}">')
        out.append(f'<text x="{(x0 + x1) / 2:.1f}" y="{top - 15}" text-anchor="middle">{metric}</text>')
        out.append(f'<line x1="{x0}" y1="{bottom}" x2="{x1:.1f}" y2="{bottom}" stroke="black"/>')
        out.append(f'<line x1="{x0}" y1="{top}" x2="{x0}" y2="{bottom}" stroke="black"/>')
        for v in (0.0, 0.25, 0.5, 0.75, 1.0):
            out.append(f'<text x="{x0 - 5}" y="{py(v) + 4:.1f}" text-anchor="end">{v:.2f}</text>')
            out.append(f'<line x1="{x0}" y1="{py(v):.1f}" x2="{x1:.1f}" y2="{py(v):.1f}" stroke="#ddd"/>')
        step = 8.0 if max_hours > 16 else max(max_hours / 4, 1.0)
        ticks = np.arange(0.0, max_hours + 1e-9, step)
        for hv in ticks:
            out.append(f'<text x="{px(hv):.1f}" y="{bottom + 15}" text-anchor="middle">{hv:g}</text>')
        out.append(f'<text x="{(x0 + x1) / 2:.1f}" y="{bottom + 32}" text-anchor="middle">hours ahead</text>')
        for c, (name, rs) in enumerate(results.items()):
            pts = " ".join(f"{px(r.horizon_hours):.2f},{py(getattr(r, metric)):.2f}" for r in rs)
            color = _COLORS[c % len(_COLORS)]
            out.append(
                f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{pts}">'
                f"<title>{escape(name)} {metric}</title></polyline>"
            )
            out.append(f'<text x="{x1 - 60:.1f}" y="{top + 14 * (c + 1)}" fill="{color}">{escape(name)}</text>')
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_metrics_csv(report: EvaluationReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for row in report.metric_rows():
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def emit_report(report: EvaluationReport, out_dir) -> dict[str, Path]:
    """Write report.json, metrics.csv, horizon.svg and (with a DBN) graph.dot."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "report": out / "report.json",
            "metrics": out / "metrics.csv",
            "plot": out / "horizon.svg",
        }
        paths["report"].write_text(json.dumps(report.to_dict(), indent=1))
        write_metrics_csv(report, paths["metrics"])
        paths["plot"].write_text(horizon_svg(report.results))
        if report.dbn is not None:
            paths["graph"] = out / "graph.dot"
            paths["graph"].write_text(export_dot(DbnModel.from_dict(report.dbn).structure))
    except OSError as exc:
        raise OSError(f"cannot write report under {out}: {exc}") from exc
    return paths
