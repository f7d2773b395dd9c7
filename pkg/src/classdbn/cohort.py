"""Patient data model, CSV ingestion, 4 h resampling and the synthetic cohort.

A cohort is a list of per-patient series of dense state vectors on a regular
grid.  Raw observations are irregular and incomplete; :func:`resample` puts
them on a per-patient grid and fills holes with the patient's own mean
("batch mean"), falling back to a cohort-wide mean frozen into the schema.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timedelta
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError, SchemaError

FEATURE_KINDS = ("vital", "blood", "static")
ID_COLUMN = "patient_id"
TIME_COLUMN = "timestamp"
LABEL_COLUMN = "label"

_TRUE = {"1", "true", "t", "yes", "y", "critical"}
_FALSE = {"0", "false", "f", "no", "n", "non-critical", "noncritical"}


@dataclass(frozen=True)
class Feature:
    name: str
    kind: str
    unit: str = ""

    def __post_init__(self):
        if self.kind not in FEATURE_KINDS:
            raise SchemaError(f"feature {self.name!r}: unknown kind {self.kind!r}")


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered feature list shared by every state vector of a cohort.

    ``fallback_means`` holds the cohort-wide means used when a patient never
    reports a feature.  They are computed on the training split and travel
    with the schema so test data is imputed without leakage.
    """

    features: tuple[Feature, ...]
    fallback_means: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise SchemaError("feature names must be unique")
        if not any(f.kind == "vital" for f in self.features):
            raise SchemaError("schema needs at least one vital feature")
        if self.fallback_means is not None:
            means = tuple(float(m) for m in self.fallback_means)
            if len(means) != len(names):
                raise SchemaError("fallback_means length does not match features")
            object.__setattr__(self, "fallback_means", means)

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.features]

    @property
    def kinds(self) -> list[str]:
        return [f.kind for f in self.features]

    def __len__(self):
        return len(self.features)

    def index(self, name: str) -> int:
        for i, f in enumerate(self.features):
            if f.name == name:
                return i
        raise SchemaError(f"unknown feature {name!r}")

    def indices(self, kind: str) -> list[int]:
        return [i for i, f in enumerate(self.features) if f.kind == kind]

    def subset(self, names: Iterable[str]) -> "FeatureSchema":
        """Schema restricted to ``names``, keeping this schema's order."""
        keep = set(names)
        unknown = keep - set(self.names)
        if unknown:
            raise SchemaError(f"unknown features {sorted(unknown)}")
        idx = [i for i, n in enumerate(self.names) if n in keep]
        means = None
        if self.fallback_means is not None:
            means = tuple(self.fallback_means[i] for i in idx)
        return FeatureSchema(tuple(self.features[i] for i in idx), means)

    def with_fallback(self, means: Sequence[float]) -> "FeatureSchema":
        return replace(self, fallback_means=tuple(float(m) for m in means))

    def digest(self) -> str:
        """Hash of the ordered (name, kind) list; used to pair models with data."""
        text = "|".join(f"{f.name}:{f.kind}" for f in self.features)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def to_dict(self) -> dict:
        out = {"features": [asdict(f) for f in self.features]}
        if self.fallback_means is not None:
            out["fallback_means"] = list(self.fallback_means)
        return out

    @classmethod
    def from_dict(cls, d: Mapping) -> "FeatureSchema":
        feats = tuple(Feature(**f) for f in d["features"])
        return cls(feats, d.get("fallback_means"))


@dataclass(frozen=True)
class RawObservation:
    patient_id: str
    timestamp: datetime
    values: Mapping[str, float]
    outcome_critical: bool


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PatientSeries:
    """One patient's slices, shape ``(T, n)``, with the patient-level label."""

    patient_id: str
    slices: np.ndarray
    label_critical: bool

    def __post_init__(self):
        s = _frozen(self.slices)
        if s.ndim != 2 or s.shape[0] < 1:
            raise DataError(f"patient {self.patient_id}: need at least one slice")
        if not np.all(np.isfinite(s)):
            raise DataError(f"patient {self.patient_id}: non-finite slice values")
        object.__setattr__(self, "slices", s)
        object.__setattr__(self, "label_critical", bool(self.label_critical))

    def __len__(self):
        return self.slices.shape[0]


@dataclass(frozen=True)
class Cohort:
    schema: FeatureSchema
    patients: tuple[PatientSeries, ...]
    meta: Mapping = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "patients", tuple(self.patients))
        ids = [p.patient_id for p in self.patients]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate patient ids in cohort")
        n = len(self.schema)
        for p in self.patients:
            if p.slices.shape[1] != n:
                raise SchemaError(
                    f"patient {p.patient_id}: {p.slices.shape[1]} features, schema has {n}"
                )

    def __len__(self):
        return len(self.patients)

    @property
    def labels(self) -> np.ndarray:
        return np.array([p.label_critical for p in self.patients], dtype=bool)

    def slice_matrix(self) -> tuple[np.ndarray, np.ndarray, list[tuple[str, int]]]:
        """Every slice as a row, with the patient label broadcast and provenance."""
        rows, ys, prov = [], [], []
        for p in self.patients:
            rows.append(p.slices)
            ys.append(np.full(len(p), p.label_critical))
            prov.extend((p.patient_id, t) for t in range(len(p)))
        if not rows:
            return np.empty((0, len(self.schema))), np.empty(0, dtype=bool), prov
        return np.vstack(rows), np.concatenate(ys), prov

    def project(self, schema: FeatureSchema) -> "Cohort":
        """Restrict every patient to the features of ``schema`` (a subset)."""
        idx = [self.schema.index(n) for n in schema.names]
        patients = tuple(
            PatientSeries(p.patient_id, p.slices[:, idx], p.label_critical) for p in self.patients
        )
        return Cohort(schema, patients, self.meta)

    def to_dict(self) -> dict:
        return {
            "schema": self.schema.to_dict(),
            "patients": [
                {"id": p.patient_id, "label": p.label_critical, "slices": p.slices.tolist()}
                for p in self.patients
            ],
            "meta": dict(self.meta),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Cohort":
        schema = FeatureSchema.from_dict(d["schema"])
        n = len(schema)
        patients = tuple(
            PatientSeries(p["id"], np.asarray(p["slices"], dtype=float).reshape(-1, n), p["label"])
            for p in d["patients"]
        )
        return cls(schema, patients, d.get("meta", {}))


def save_cohort(cohort: Cohort, path) -> None:
    Path(path).write_text(json.dumps(cohort.to_dict()))


def load_cohort(path) -> Cohort:
    return Cohort.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class TransitionDataset:
    """Stacked ``[x_t | x_t+1]`` rows, ``2n`` columns."""

    rows: np.ndarray
    provenance: tuple[tuple[str, int], ...]
    schema: FeatureSchema

    def __post_init__(self):
        object.__setattr__(self, "rows", _frozen(self.rows))
        object.__setattr__(self, "provenance", tuple(self.provenance))

    @property
    def n_features(self) -> int:
        return self.rows.shape[1] // 2

    def __len__(self):
        return self.rows.shape[0]

    @property
    def current(self) -> np.ndarray:
        return self.rows[:, : self.n_features]

    @property
    def following(self) -> np.ndarray:
        return self.rows[:, self.n_features :]


# ----------------------------------------------------------------------------
# ingestion


def _parse_time(text: str, line: int) -> datetime:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    try:
        return datetime.fromisoformat(text)
    except ValueError:
        raise DataError(f"line {line}: bad timestamp {text!r}") from None


def _parse_label(text: str, line: int) -> bool:
    t = text.strip().lower()
    if t in _TRUE:
        return True
    if t in _FALSE:
        return False
    raise DataError(f"line {line}: bad label {text!r}")


def ingest_csv(path, schema: FeatureSchema) -> list[RawObservation]:
    """Read ``patient_id,timestamp,label,<features...>`` rows.

    Blank cells are missing values.  Numbers must use a dot decimal
    separator.  Output is sorted by ``(patient_id, timestamp)``.
    """
    known = set(schema.names)
    out: list[RawObservation] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file, no header") from None
        for col in (ID_COLUMN, TIME_COLUMN, LABEL_COLUMN):
            if col not in header:
                raise SchemaError(f"{path}: missing required column {col!r}")
        feat_cols = [h for h in header if h not in (ID_COLUMN, TIME_COLUMN, LABEL_COLUMN)]
        unknown = [h for h in feat_cols if h not in known]
        if unknown:
            raise SchemaError(f"{path}: columns not in schema: {unknown}")
        pos = {h: i for i, h in enumerate(header)}
        seen = set()
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"line {line}: expected {len(header)} cells, got {len(row)}")
            pid = row[pos[ID_COLUMN]].strip()
            ts = _parse_time(row[pos[TIME_COLUMN]], line)
            label = _parse_label(row[pos[LABEL_COLUMN]], line)
            values = {}
            for name in feat_cols:
                cell = row[pos[name]].strip()
                if not cell:
                    continue
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"line {line}: column {name!r}: not a number: {cell!r}") from None
                if not math.isfinite(v):
                    raise DataError(f"line {line}: column {name!r}: non-finite value")
                values[name] = v
            if (pid, ts) in seen:
                raise DataError(f"line {line}: duplicate observation for {pid} at {ts.isoformat()}")
            seen.add((pid, ts))
            out.append(RawObservation(pid, ts, values, label))
    try:
        out.sort(key=lambda o: (o.patient_id, o.timestamp))
    except TypeError:
        raise DataError(f"{path}: mixed naive and timezone-aware timestamps") from None
    return out


def write_observations_csv(observations: Sequence[RawObservation], schema: FeatureSchema, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([ID_COLUMN, TIME_COLUMN, LABEL_COLUMN, *schema.names])
        for o in observations:
            cells = [repr(o.values[n]) if n in o.values else "" for n in schema.names]
            w.writerow([o.patient_id, o.timestamp.isoformat(), int(o.outcome_critical), *cells])


# ----------------------------------------------------------------------------
# resampling


def _group(observations: Sequence[RawObservation]) -> dict[str, list[RawObservation]]:
    groups: dict[str, list[RawObservation]] = {}
    for o in observations:
        groups.setdefault(o.patient_id, []).append(o)
    return groups


def observed_means(observations: Sequence[RawObservation], schema: FeatureSchema) -> np.ndarray:
    """Mean of every raw observed value per feature; NaN if never observed."""
    n = len(schema)
    sums, counts = np.zeros(n), np.zeros(n)
    index = {name: i for i, name in enumerate(schema.names)}
    for o in observations:
        for name, v in o.values.items():
            i = index[name]
            sums[i] += v
            counts[i] += 1
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)


def _patient_mean(col: np.ndarray) -> float:
    obs = col[~np.isnan(col)]
    if obs.size == 0:
        return math.nan
    if np.all(obs == obs[0]):
        return float(obs[0])
    return float(obs.mean())


def resample(
    observations: Sequence[RawObservation],
    schema: FeatureSchema,
    period_hours: float = 4.0,
    fallback_means: Sequence[float] | None = None,
) -> Cohort:
    """Grid each patient's observations into ``period_hours`` buckets.

    Buckets start at the patient's first timestamp.  Readings sharing a
    bucket are averaged; a feature missing from a bucket takes the mean over
    the patient's other buckets, or the cohort fallback mean when the patient
    never reports it.  Empty buckets between readings are emitted and imputed
    entirely so slice index stays proportional to elapsed time.  Static
    features are broadcast to every slice.

    ``fallback_means`` defaults to the observed means of ``observations`` and
    is frozen into the returned schema; pass the training schema's means when
    resampling held-out patients.
    """
    if period_hours <= 0:
        raise DataError("period_hours must be positive")
    n = len(schema)
    index = {name: i for i, name in enumerate(schema.names)}
    if fallback_means is None:
        fallback = observed_means(observations, schema)
        missing = [schema.names[i] for i in np.flatnonzero(np.isnan(fallback))]
        if missing and observations:
            raise DataError(f"feature(s) missing for the entire cohort: {missing}")
    else:
        fallback = np.asarray(fallback_means, dtype=float)
        if fallback.shape != (n,) or not np.all(np.isfinite(fallback)):
            raise DataError("fallback_means must be finite and match the schema")
    static = np.array([k == "static" for k in schema.kinds])
    period_min = period_hours * 60.0

    patients = []
    for pid, obs in _group(observations).items():
        t0 = obs[0].timestamp
        buckets = []
        for o in obs:
            minutes = (o.timestamp - t0).total_seconds() / 60.0
            if minutes < 0:
                raise DataError(f"patient {pid}: observations are not sorted by time")
            buckets.append(int(minutes // period_min))
        n_buckets = buckets[-1] + 1
        sums = np.zeros((n_buckets, n))
        counts = np.zeros((n_buckets, n))
        for b, o in zip(buckets, obs):
            for name, v in o.values.items():
                i = index.get(name)
                if i is None:
                    raise SchemaError(f"patient {pid}: unknown feature {name!r}")
                sums[b, i] += v
                counts[b, i] += 1
        with np.errstate(invalid="ignore", divide="ignore"):
            grid = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
        for j in range(n):
            m = _patient_mean(grid[:, j])
            if math.isnan(m):
                m = fallback[j]
            if static[j]:
                grid[:, j] = m
            else:
                grid[np.isnan(grid[:, j]), j] = m
        label = any(o.outcome_critical for o in obs)
        patients.append(PatientSeries(pid, grid, label))
    return Cohort(schema.with_fallback(fallback), tuple(patients))


def cohort_to_observations(
    cohort: Cohort, period_hours: float = 4.0, start: datetime = datetime(2000, 1, 1)
) -> list[RawObservation]:
    """Emit one observation per slice on an exact ``period_hours`` grid."""
    step = timedelta(hours=period_hours)
    names = cohort.schema.names
    out = []
    for p in cohort.patients:
        for t, row in enumerate(p.slices):
            values = {name: float(v) for name, v in zip(names, row)}
            out.append(RawObservation(p.patient_id, start + t * step, values, p.label_critical))
    return out


# ----------------------------------------------------------------------------
# transitions and splitting


def build_transitions(cohort: Cohort) -> TransitionDataset:
    """One ``[S_t | S_t+1]`` row per consecutive slice pair of every patient."""
    if len(cohort) == 0:
        raise DataError("cohort is empty")
    blocks, prov = [], []
    for p in cohort.patients:
        if len(p) < 2:
            continue
        blocks.append(np.hstack([p.slices[:-1], p.slices[1:]]))
        prov.extend((p.patient_id, t) for t in range(len(p) - 1))
    if not blocks:
        raise DataError("no patient has two or more slices; the DBN cannot be trained")
    return TransitionDataset(np.vstack(blocks), prov, cohort.schema)


def stratified_split_ids(
    ids: Sequence[str], labels: Sequence[bool], train_fraction: float, seed: int
) -> tuple[list[str], list[str]]:
    """Stratified split of ids; total train size is ``round(fraction * N)``.

    Every stratum keeps at least one id on each side.
    """
    if not 0.0 < train_fraction < 1.0:
        raise DataError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    ids = list(ids)
    labels = [bool(v) for v in labels]
    rng = np.random.default_rng(seed)
    strata = {}
    for lab in (False, True):
        members = sorted(i for i, v in zip(ids, labels) if v == lab)
        if not members:
            continue
        if len(members) < 2:
            raise DataError(f"stratum label={lab} has fewer than 2 patients")
        strata[lab] = [members[k] for k in rng.permutation(len(members))]
    target = int(round(train_fraction * len(ids)))
    exact = {lab: train_fraction * len(m) for lab, m in strata.items()}
    take = {lab: min(max(int(math.floor(e)), 1), len(strata[lab]) - 1) for lab, e in exact.items()}
    order = sorted(strata, key=lambda lab: (-(exact[lab] - math.floor(exact[lab])), lab))
    while sum(take.values()) < target:
        room = [lab for lab in order if take[lab] < len(strata[lab]) - 1]
        if not room:
            break
        take[room[0]] += 1
        order = order[1:] + order[:1]
    while sum(take.values()) > target:
        room = [lab for lab in reversed(order) if take[lab] > 1]
        if not room:
            break
        take[room[0]] -= 1
    train = [i for lab in (False, True) if lab in strata for i in strata[lab][: take[lab]]]
    test = [i for lab in (False, True) if lab in strata for i in strata[lab][take[lab] :]]
    return sorted(train), sorted(test)


def split_patients(cohort: Cohort, train_fraction: float, seed: int) -> tuple[Cohort, Cohort]:
    """Whole-patient split, stratified on the outcome label."""
    ids = [p.patient_id for p in cohort.patients]
    train_ids, _ = stratified_split_ids(ids, cohort.labels, train_fraction, seed)
    chosen = set(train_ids)
    train = tuple(p for p in cohort.patients if p.patient_id in chosen)
    test = tuple(p for p in cohort.patients if p.patient_id not in chosen)
    return Cohort(cohort.schema, train, cohort.meta), Cohort(cohort.schema, test, cohort.meta)


# ----------------------------------------------------------------------------
# synthetic cohort

# (name, unit, typical value, spread); the first vital is the oxygen-saturation analog
_VITALS = [
    ("spo2_max", "%", 95.0, 2.0),
    ("spo2_min", "%", 92.0, 2.5),
    ("heart_rate_min", "bpm", 72.0, 8.0),
    ("temperature", "degC", 36.9, 0.5),
    ("sbp_min", "mmHg", 118.0, 10.0),
    ("dbp_max", "mmHg", 78.0, 8.0),
    ("resp_rate", "1/min", 17.0, 2.5),
]
_BLOOD = [
    ("crp", "mg/L", 60.0, 30.0),
    ("d_dimer", "ng/mL", 900.0, 400.0),
    ("ldh", "U/L", 280.0, 70.0),
    ("lymphocytes", "10^3/uL", 1.2, 0.4),
    ("albumin", "g/dL", 3.8, 0.4),
    ("ferritin", "ng/mL", 600.0, 250.0),
    ("neutrophils", "10^3/uL", 5.5, 1.8),
    ("platelets", "10^3/uL", 230.0, 60.0),
    ("creatinine", "mg/dL", 0.9, 0.25),
    ("glucose", "mg/dL", 115.0, 25.0),
]
_STATIC = [
    ("age", "years", 62.0, 15.0),
    ("sex", "", 0.5, 0.5),
    ("bmi", "kg/m2", 27.0, 4.0),
]
# direction each dynamic feature drifts for critical patients (+1 worsens upward)
_DRIFT_SIGN = {
    "spo2_max": -1, "spo2_min": -1, "heart_rate_min": 1, "temperature": 1, "sbp_min": 1,
    "dbp_max": 1, "resp_rate": 1, "crp": 1, "d_dimer": 1, "ldh": 1, "lymphocytes": -1,
    "albumin": -1, "ferritin": 1, "neutrophils": 1, "platelets": -1, "creatinine": 1,
    "glucose": 1,
}


@dataclass(frozen=True)
class GeneratorConfig:
    """Parameters of the synthetic VAR(1) cohort.

    Dynamics live in standardized units: ``z' = A z + B s + c * d + noise``
    where ``s`` are the standardized static descriptors, ``A`` is rescaled
    to ``spectral_radius`` and ``c`` is 1 for critical patients and
    ``-recovery`` otherwise.  Values are mapped back to clinical scales before
    emission.
    """

    n_patients: int = 1000
    n_features: int = 17
    critical_prevalence: float = 0.188
    missing_rate: float = 0.1
    spectral_radius: float = 0.8
    coupling: float = 0.15
    drift: float = 0.3
    recovery: float = 0.0
    static_risk: float = 2.5
    static_coupling: float = 0.2
    noise: float = 0.35
    single_slice_prob: float = 0.45
    single_slice_prob_critical: float = 0.35
    stay_mean: float = 2.5
    stay_mean_critical: float = 3.5
    max_slices: int = 30
    period_hours: float = 4.0

    def validate(self) -> None:
        if not 0.0 < self.critical_prevalence < 1.0:
            raise DataError("critical_prevalence must lie in (0, 1)")
        if not 0.0 <= self.spectral_radius < 1.0:
            raise DataError(f"unstable dynamics requested: spectral_radius={self.spectral_radius}")
        if not 0.0 <= self.missing_rate < 1.0:
            raise DataError("missing_rate must lie in [0, 1)")
        if self.n_patients < 1:
            raise DataError("n_patients must be >= 1")
        if self.n_features < 2:
            raise DataError("n_features must be >= 2")
        if self.max_slices < 1:
            raise DataError("max_slices must be >= 1")


def synthetic_schema(n_features: int) -> FeatureSchema:
    """Feature catalog for the generator: 3 statics, then vitals and blood."""
    n_static = 3 if n_features >= 5 else 0
    n_dyn = n_features - n_static
    n_vital = max(1, (n_dyn + 1) // 2)
    n_blood = n_dyn - n_vital

    def take(catalog, k, prefix):
        items = [(name, unit) for name, unit, _, _ in catalog[:k]]
        items += [(f"{prefix}_{i + 1}", "") for i in range(len(items), k)]
        return items

    feats = [Feature(n, "vital", u) for n, u in take(_VITALS, n_vital, "vital")]
    feats += [Feature(n, "blood", u) for n, u in take(_BLOOD, n_blood, "blood")]
    feats += [Feature(n, "static", u) for n, u in take(_STATIC, n_static, "static")]
    return FeatureSchema(tuple(feats))


def _scales(schema: FeatureSchema) -> tuple[np.ndarray, np.ndarray]:
    table = {name: (mu, sd) for name, _, mu, sd in _VITALS + _BLOOD + _STATIC}
    mu = np.array([table.get(n, (0.0, 1.0))[0] for n in schema.names])
    sd = np.array([table.get(n, (0.0, 1.0))[1] for n in schema.names])
    return mu, sd


def transition_matrix(config: GeneratorConfig, n_dyn: int, rng: np.random.Generator) -> np.ndarray:
    """Sparse-coupled autoregressive matrix rescaled to the target spectral radius."""
    diag = rng.uniform(0.6, 1.0, n_dyn)
    off = rng.normal(0.0, config.coupling, (n_dyn, n_dyn))
    off *= rng.random((n_dyn, n_dyn)) < 0.25
    np.fill_diagonal(off, 0.0)
    a = np.diag(diag) + off
    radius = float(np.max(np.abs(np.linalg.eigvals(a))))
    if radius > 0:
        a *= config.spectral_radius / radius
    return a


def _stay_length(rng, critical: bool, config: GeneratorConfig) -> int:
    p_single = config.single_slice_prob_critical if critical else config.single_slice_prob
    if rng.random() < p_single:
        return 1
    mean = config.stay_mean_critical if critical else config.stay_mean
    # 2 + negative binomial(2, p): mode at 2-3 slices with a long tail
    extra_mean = max(mean - 2.0, 1e-6)
    p = 2.0 / (2.0 + extra_mean)
    return int(min(2 + rng.negative_binomial(2, p), config.max_slices))


def synthetic_observations(
    config: GeneratorConfig, seed: int
) -> tuple[FeatureSchema, list[RawObservation], dict]:
    """Raw, gappy observations from the synthetic generator.

    Returns the schema, the observations (one per 4 h slice, ``missing_rate``
    of the cells blanked) and the ground-truth parameters.
    """
    config.validate()
    rng = np.random.default_rng(seed)
    schema = synthetic_schema(config.n_features)
    mu, sd = _scales(schema)
    dyn = [i for i, k in enumerate(schema.kinds) if k != "static"]
    sta = schema.indices("static")
    a = transition_matrix(config, len(dyn), rng)
    b = rng.normal(0.0, config.static_coupling, (len(dyn), len(sta)))
    d = config.drift * np.array([_DRIFT_SIGN.get(schema.names[i], 1) for i in dyn], dtype=float)

    labels = rng.random(config.n_patients) < config.critical_prevalence
    start = datetime(2000, 1, 1)
    step = timedelta(hours=config.period_hours)
    width = len(str(config.n_patients - 1))
    observations = []
    for k in range(config.n_patients):
        crit = bool(labels[k])
        c_label = 1.0 if crit else -config.recovery
        length = _stay_length(rng, crit, config)
        s = rng.normal(0.0, 1.0, len(sta))
        if len(sta):
            s[0] += config.static_risk * crit
        z = rng.normal(0.0, 1.0, len(dyn))
        traj = np.empty((length, len(schema)))
        for t in range(length):
            if t > 0:
                z = a @ z + b @ s + c_label * d + rng.normal(0.0, config.noise, len(dyn))
            traj[t, dyn] = z
            traj[t, sta] = s
        values = mu + sd * traj
        if "sex" in schema.names:
            j = schema.index("sex")
            values[:, j] = float(s[1] > 0.0)
        mask = rng.random(values.shape) < config.missing_rate
        offset = timedelta(minutes=int(rng.integers(0, 60 * 24 * 30)))
        pid = f"P{k:0{width}d}"
        for t in range(length):
            row = {name: float(values[t, j]) for j, name in enumerate(schema.names) if not mask[t, j]}
            observations.append(RawObservation(pid, start + offset + t * step, row, crit))
    truth = {
        "transition": a.tolist(),
        "static_effect": b.tolist(),
        "drift": d.tolist(),
        "dynamic_features": [schema.names[i] for i in dyn],
        "static_features": [schema.names[i] for i in sta],
        "scale_mean": mu.tolist(),
        "scale_sd": sd.tolist(),
    }
    return schema, observations, truth


def generate_synthetic(config: GeneratorConfig, seed: int) -> Cohort:
    """Seeded synthetic cohort, resampled and imputed like real input would be.

    The generator parameters and seed are stored in ``cohort.meta`` so any
    experiment built on it can be replayed.
    """
    schema, observations, _ = synthetic_observations(config, seed)
    cohort = resample(observations, schema, config.period_hours)
    meta = {"generator": asdict(config), "seed": int(seed)}
    return Cohort(cohort.schema, cohort.patients, meta)
