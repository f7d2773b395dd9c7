"""Imbalance-aware metrics and differential-evolution hyperparameter search."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

KINDS = ("real", "integer", "log-real")


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        for name in ("tp", "fp", "tn", "fn"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)

    @classmethod
    def from_predictions(cls, y_true, y_pred) -> "ConfusionMatrix":
        t = np.asarray(y_true, dtype=bool)
        p = np.asarray(y_pred, dtype=bool)
        return cls(int(np.sum(t & p)), int(np.sum(~t & p)), int(np.sum(~t & ~p)), int(np.sum(t & ~p)))

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    recall: float
    specificity: float
    g_mean: float


def metrics(cm: ConfusionMatrix) -> Metrics:
    """Accuracy, recall, specificity and ``g_mean = sqrt(recall * specificity)``.

    A recall or specificity with an empty denominator counts as 0, so a
    split without one of the classes can never look optimal.
    """
    if cm.total <= 0:
        raise DataError("confusion matrix is empty")
    pos = cm.tp + cm.fn
    neg = cm.tn + cm.fp
    recall = cm.tp / pos if pos else 0.0
    specificity = cm.tn / neg if neg else 0.0
    return Metrics(
        accuracy=(cm.tp + cm.tn) / cm.total,
        recall=recall,
        specificity=specificity,
        g_mean=math.sqrt(recall * specificity),
    )


def g_mean_score(y_true, y_pred) -> float:
    return metrics(ConfusionMatrix.from_predictions(y_true, y_pred)).g_mean


# ----------------------------------------------------------------------------
# differential evolution


@dataclass(frozen=True)
class Param:
    name: str
    lower: float
    upper: float
    kind: str = "real"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"parameter {self.name}: unknown kind {self.kind!r}")
        if not self.lower < self.upper:
            raise ConfigError(f"parameter {self.name}: lower bound must be < upper bound")
        if self.kind == "log-real" and self.lower <= 0:
            raise ConfigError(f"parameter {self.name}: log-real bounds must be positive")

    # DE works in an internal box: log10 for log-real parameters
    @property
    def box(self) -> tuple[float, float]:
        if self.kind == "log-real":
            return math.log10(self.lower), math.log10(self.upper)
        return float(self.lower), float(self.upper)

    def decode(self, u: float):
        if self.kind == "log-real":
            return float(min(max(10.0 ** u, self.lower), self.upper))
        if self.kind == "integer":
            return int(min(max(round(u), math.ceil(self.lower)), math.floor(self.upper)))
        return float(u)


@dataclass(frozen=True)
class ParamSpace:
    params: tuple[Param, ...]

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(self.params))
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate parameter names")
        if not self.params:
            raise ConfigError("parameter space is empty")

    def __len__(self):
        return len(self.params)

    @property
    def lower(self) -> np.ndarray:
        return np.array([p.box[0] for p in self.params])

    @property
    def upper(self) -> np.ndarray:
        return np.array([p.box[1] for p in self.params])

    def decode(self, u: np.ndarray) -> dict[str, Any]:
        return {p.name: p.decode(float(x)) for p, x in zip(self.params, u)}

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Sequence]) -> "ParamSpace":
        """``{name: [lower, upper, kind]}`` as written in the ``[tune]`` config."""
        params = []
        for name, v in mapping.items():
            kind = v[2] if len(v) > 2 else "real"
            params.append(Param(name, float(v[0]), float(v[1]), kind))
        return cls(tuple(params))


@dataclass(frozen=True)
class DeConfig:
    population_size: int = 20
    weight: float = 0.8
    crossover: float = 0.9
    max_generations: int = 50
    seed: int = 0

    def validate(self) -> None:
        if self.population_size < 4:
            raise ConfigError("differential evolution needs population_size >= 4")
        if not 0.0 < self.weight <= 2.0:
            raise ConfigError("differential weight F must lie in (0, 2]")
        if not 0.0 <= self.crossover <= 1.0:
            raise ConfigError("crossover rate CR must lie in [0, 1]")
        if self.max_generations < 0:
            raise ConfigError("max_generations must be >= 0")


@dataclass
class DeResult:
    best_params: dict
    best_value: float
    best_vector: np.ndarray
    trace: list[tuple[int, float, float]] = field(default_factory=list)
    member_fitness: list[np.ndarray] = field(default_factory=list)
    populations: list[np.ndarray] = field(default_factory=list)


def reflect(u: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    """Fold coordinates back into ``[lower, upper]`` by mirror reflection."""
    width = upper - lower
    r = np.mod(u - lower, 2.0 * width)
    r = np.where(r > width, 2.0 * width - r, r)
    return np.clip(lower + r, lower, upper)


def _safe(objective, params) -> float:
    try:
        value = float(objective(params))
    except Exception as exc:  # noqa: BLE001 - any failing candidate is simply unfit
        log.warning("objective failed for %s: %s", params, exc)
        return -math.inf
    return value if not math.isnan(value) else -math.inf


def _finite_mean(values: np.ndarray) -> float:
    finite = values[np.isfinite(values)]
    return float(finite.mean()) if finite.size else -math.inf


def de_optimize(
    objective: Callable[[dict], float],
    space: ParamSpace,
    config: DeConfig = DeConfig(),
    keep_history: bool = False,
) -> DeResult:
    """Maximize ``objective`` with DE/rand/1/bin.

    Mutants ``a + F (b - c)`` are reflected into the box; integer parameters
    are rounded only when decoded for evaluation.  A trial replaces its
    parent when its fitness is at least as good.  Failing evaluations count
    as ``-inf``.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    lo, hi = space.lower, space.upper
    npop, dim = config.population_size, len(space)
    pop = lo + rng.random((npop, dim)) * (hi - lo)
    fit = np.array([_safe(objective, space.decode(x)) for x in pop])
    result = DeResult({}, -math.inf, pop[0].copy())

    def record(gen):
        b = int(np.argmax(fit))
        if fit[b] > result.best_value or not result.best_params:
            result.best_value = float(fit[b])
            result.best_vector = pop[b].copy()
            result.best_params = space.decode(pop[b])
        result.trace.append((gen, result.best_value, _finite_mean(fit)))
        if keep_history:
            result.member_fitness.append(fit.copy())
            result.populations.append(pop.copy())

    record(0)
    idx = np.arange(npop)
    for gen in range(1, config.max_generations + 1):
        trials = np.empty_like(pop)
        for i in range(npop):
            a, b, c = rng.choice(idx[idx != i], 3, replace=False)
            mutant = reflect(pop[a] + config.weight * (pop[b] - pop[c]), lo, hi)
            cross = rng.random(dim) < config.crossover
            cross[rng.integers(dim)] = True
            trials[i] = np.where(cross, mutant, pop[i])
        trial_fit = np.array([_safe(objective, space.decode(x)) for x in trials])
        # selection barrier applied in member-index order
        for i in range(npop):
            if trial_fit[i] >= fit[i]:
                pop[i] = trials[i]
                fit[i] = trial_fit[i]
        record(gen)
    return result


def write_trace_csv(trace: Sequence[tuple[int, float, float]], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["generation", "best_fitness", "mean_fitness"])
        for gen, best, mean in trace:
            w.writerow([gen, repr(best), repr(mean)])


# ----------------------------------------------------------------------------
# classifier tuning


@dataclass
class TuneResult:
    best_params: dict
    best_g_mean: float
    trace: list[tuple[int, float, float]]


def tune_classifier(
    trainer: Callable[[dict, np.ndarray, np.ndarray], Any],
    train: tuple[np.ndarray, np.ndarray],
    validation: tuple[np.ndarray, np.ndarray],
    space: ParamSpace,
    de_config: DeConfig = DeConfig(),
    smote_config=None,
) -> TuneResult:
    """Pick the trainer configuration with the best validation g-mean.

    ``trainer(params, X, y)`` must return a model with ``predict(X)``.  When
    ``smote_config`` is given, SMOTE rebalances the training portion inside
    every objective evaluation; the validation rows are never oversampled.
    Parameters named ``perc_over`` / ``perc_under`` in ``space`` override the
    SMOTE percentages per candidate.
    """
    from .balance import SmoteConfig, smote

    x_tr, y_tr = np.asarray(train[0], dtype=float), np.asarray(train[1], dtype=bool)
    x_va, y_va = np.asarray(validation[0], dtype=float), np.asarray(validation[1], dtype=bool)
    if y_va.all() or not y_va.any():
        raise DataError("validation split must contain both classes")

    def objective(params: dict) -> float:
        x, y = x_tr, y_tr
        if smote_config is not None:
            cfg = smote_config
            overrides = {k: params[k] for k in ("perc_over", "perc_under") if k in params}
            if overrides:
                cfg = SmoteConfig(**{**cfg.__dict__, **overrides})
            balanced = smote(x, y, cfg)
            x, y = balanced.X, balanced.y
        model = trainer(params, x, y)
        pred = np.asarray(model.predict(x_va), dtype=bool)
        return g_mean_score(y_va, pred)

    res = de_optimize(objective, space, de_config)
    return TuneResult(res.best_params, res.best_value, res.trace)
