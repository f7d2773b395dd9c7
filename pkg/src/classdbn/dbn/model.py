"""Fitted two-slice Gaussian DBN: point forecasts, densities and graph queries."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np

from ..cohort import FeatureSchema
from ..errors import DataError, ForecastDivergenceError, SchemaError
from .structure import T0, T1, DbnStructure, NeighborhoodGraph, SliceNode

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class LinearGaussianCpd:
    """``child | parents ~ N(intercept + coefficients . parents, residual_variance)``."""

    child: SliceNode
    parents: tuple[SliceNode, ...]
    intercept: float
    coefficients: tuple[float, ...]
    residual_variance: float

    def __post_init__(self):
        object.__setattr__(self, "parents", tuple(self.parents))
        object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))
        if self.child.slice != T1:
            raise DataError(f"CPD child {self.child} must be a t1 node")
        if len(self.parents) != len(self.coefficients):
            raise DataError(f"{self.child}: {len(self.parents)} parents but {len(self.coefficients)} coefficients")
        if not (self.residual_variance > 0 and math.isfinite(self.residual_variance)):
            raise DataError(f"{self.child}: residual variance must be positive and finite")
        if not all(math.isfinite(c) for c in self.coefficients) or not math.isfinite(self.intercept):
            raise DataError(f"{self.child}: non-finite coefficients")

    def log_density(self, value: float, parent_values) -> float:
        mean = self.intercept + float(np.dot(self.coefficients, parent_values))
        var = self.residual_variance
        return -0.5 * (_LOG_2PI + math.log(var) + (value - mean) ** 2 / var)

    def to_dict(self) -> dict:
        return {
            "child": self.child.label,
            "parents": [p.label for p in self.parents],
            "intercept": self.intercept,
            "coefficients": list(self.coefficients),
            "variance": self.residual_variance,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "LinearGaussianCpd":
        return cls(
            SliceNode.parse(d["child"]),
            tuple(SliceNode.parse(p) for p in d["parents"]),
            float(d["intercept"]),
            tuple(d["coefficients"]),
            float(d["variance"]),
        )


class DbnModel:
    """Structure plus one CPD per t1 node, compiled for batched mean propagation."""

    def __init__(
        self,
        schema: FeatureSchema,
        structure: DbnStructure,
        cpds,
        period_hours: float = 4.0,
    ):
        self.schema = schema
        self.structure = structure
        self.period_hours = float(period_hours)
        names = schema.names
        if list(structure.variables) != names:
            raise SchemaError("structure variables do not match schema order")
        by_child = {c.child: c for c in cpds}
        pmap = structure.parent_map()
        if set(by_child) != set(pmap):
            raise DataError("need exactly one CPD per t1 node")
        for child, parents in pmap.items():
            if set(by_child[child].parents) != set(parents) or len(by_child[child].parents) != len(parents):
                raise DataError(f"CPD parents of {child} do not match the structure")
        self.cpds = tuple(by_child[SliceNode(v, T1)] for v in names)
        self._index = {v: i for i, v in enumerate(names)}
        self._plan = []
        for node in structure.topological_order():
            cpd = by_child[node]
            j = self._index[node.variable]
            t0 = [(k, self._index[p.variable]) for k, p in enumerate(cpd.parents) if p.slice == T0]
            t1 = [(k, self._index[p.variable]) for k, p in enumerate(cpd.parents) if p.slice == T1]
            coef = np.asarray(cpd.coefficients)
            self._plan.append(
                (
                    j,
                    cpd.intercept,
                    np.array([i for _, i in t0], dtype=int),
                    coef[[k for k, _ in t0]],
                    np.array([i for _, i in t1], dtype=int),
                    coef[[k for k, _ in t1]],
                )
            )

    @property
    def n_features(self) -> int:
        return len(self.schema)

    def cpd(self, variable: str) -> LinearGaussianCpd:
        return self.cpds[self._index[variable]]

    def step(self, states: np.ndarray) -> np.ndarray:
        """Conditional means of t1 given rows of t0 values, shape ``(m, n)``."""
        states = np.asarray(states, dtype=float)
        out = np.empty_like(states)
        # overflow is reported by the forecaster as divergence, not as a warning
        with np.errstate(over="ignore", invalid="ignore"):
            for j, b0, t0_idx, t0_coef, t1_idx, t1_coef in self._plan:
                mean = b0 + states[:, t0_idx] @ t0_coef
                if t1_idx.size:
                    mean = mean + out[:, t1_idx] @ t1_coef
                out[:, j] = mean
        return out

    def inter_slice_matrix(self) -> tuple[np.ndarray, np.ndarray]:
        """Affine map ``x1 = M x0 + c`` of the mean step (intra-slice arcs folded in)."""
        n = self.n_features
        c = self.step(np.zeros((1, n)))[0]
        m = self.step(np.eye(n)) - c
        return m.T, c

    def to_dict(self) -> dict:
        return {
            "schema": self.schema.to_dict(),
            "period_hours": self.period_hours,
            "max_parents": self.structure.max_parents,
            "arcs": self.structure.arc_labels(),
            "cpds": [c.to_dict() for c in self.cpds],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "DbnModel":
        schema = FeatureSchema.from_dict(d["schema"])
        structure = DbnStructure.from_labels(schema.names, d["arcs"], d.get("max_parents"))
        cpds = [LinearGaussianCpd.from_dict(c) for c in d["cpds"]]
        return cls(schema, structure, cpds, d.get("period_hours", 4.0))


def save_model(model: DbnModel, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=1))


def load_model(path) -> DbnModel:
    return DbnModel.from_dict(json.loads(Path(path).read_text()))


def _as_state(model: DbnModel, s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    if s.shape != (model.n_features,):
        raise SchemaError(f"expected a state vector of {model.n_features} features, got shape {s.shape}")
    return s


def predict_step(model: DbnModel, s0) -> np.ndarray:
    """Mean of the next slice given the current one."""
    return model.step(_as_state(model, s0)[None, :])[0]


@dataclass(frozen=True)
class Trajectory:
    """Forecast states for steps ``1..horizon``; ``hours[h-1] = h * period``."""

    states: np.ndarray
    period_hours: float

    def __len__(self):
        return self.states.shape[0]

    def __getitem__(self, i):
        return self.states[i]

    def __iter__(self) -> Iterator[np.ndarray]:
        return iter(self.states)

    @property
    def horizon(self) -> int:
        return len(self)

    @property
    def hours(self) -> np.ndarray:
        return self.period_hours * np.arange(1, len(self) + 1)

    @property
    def span_hours(self) -> float:
        return self.period_hours * len(self)


def forecast(model: DbnModel, s0, horizon: int) -> Trajectory:
    """Feed each predicted mean back in as the next input."""
    if horizon < 1:
        raise DataError("horizon must be >= 1")
    s = _as_state(model, s0)
    out = np.empty((horizon, model.n_features))
    for h in range(horizon):
        s = predict_step(model, s)
        if not np.all(np.isfinite(s)):
            raise ForecastDivergenceError(h + 1)
        out[h] = s
    out.setflags(write=False)
    return Trajectory(out, model.period_hours)


def forecast_batch(model: DbnModel, starts: np.ndarray, horizon: int) -> tuple[np.ndarray, np.ndarray]:
    """Forecast many start states at once.

    Returns ``(paths, ok)`` where ``paths`` has shape ``(horizon, m, n)`` and
    ``ok[h, i]`` is False once start ``i`` has gone non-finite at step ``h+1``.
    """
    if horizon < 1:
        raise DataError("horizon must be >= 1")
    s = np.asarray(starts, dtype=float)
    if s.ndim != 2 or s.shape[1] != model.n_features:
        raise SchemaError(f"starts must have {model.n_features} columns")
    paths = np.empty((horizon,) + s.shape)
    ok = np.empty((horizon, s.shape[0]), dtype=bool)
    alive = np.ones(s.shape[0], dtype=bool)
    with np.errstate(over="ignore", invalid="ignore"):
        for h in range(horizon):
            s = model.step(s)
            alive &= np.all(np.isfinite(s), axis=1)
            paths[h] = s
            ok[h] = alive
    return paths, ok


def joint_log_density(model: DbnModel, s0, s1) -> float:
    """``log p(s1 | s0)`` as the sum of the t1 nodes' conditional log densities."""
    s0 = _as_state(model, s0)
    s1 = _as_state(model, s1)
    total = 0.0
    index = model._index
    for cpd in model.cpds:
        pv = [(s0 if p.slice == T0 else s1)[index[p.variable]] for p in cpd.parents]
        total += cpd.log_density(s1[index[cpd.child.variable]], pv)
    return total


def neighborhood(model_or_structure, variable: str, lagged: bool = False) -> DbnStructure:
    """Local view around ``variable``'s t1 node: its parents, children and their arcs.

    With ``lagged`` the t1 children of ``variable``'s t0 copy are included as
    well, i.e. the variables whose next value depends on its current value.
    """
    structure = getattr(model_or_structure, "structure", model_or_structure)
    if variable not in structure.variables:
        raise SchemaError(f"unknown variable {variable!r}")
    center = SliceNode(variable, T1)
    nodes = {center, *structure.parents(center), *structure.children(center)}
    if lagged:
        past = SliceNode(variable, T0)
        nodes |= {past, *structure.children(past)}
    keep = {(u, v) for u, v in structure.arcs if u in nodes and v in nodes and center in (u, v)}
    if lagged:
        keep |= {(u, v) for u, v in structure.arcs if u == SliceNode(variable, T0)}
    variables = tuple(v for v in structure.variables if any(n.variable == v for n in nodes))
    return NeighborhoodGraph(variables, frozenset(keep), None, frozenset(nodes))
