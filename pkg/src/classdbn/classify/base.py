"""Common classifier surface: probability of the critical class per state vector."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import SchemaError

THRESHOLD = 0.5


class Classifier:
    """Subclasses implement ``_proba(X)`` on a 2-D array and the dict round trip."""

    kind = "base"

    def __init__(self, n_inputs: int, hyperparameters: dict | None = None, schema_hash: str | None = None):
        self.n_inputs = int(n_inputs)
        self.hyperparameters = dict(hyperparameters or {})
        self.schema_hash = schema_hash

    @property
    def name(self) -> str:
        return self.kind

    def _check(self, X) -> tuple[np.ndarray, bool]:
        x = np.asarray(X, dtype=float)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        if x.ndim != 2 or x.shape[1] != self.n_inputs:
            raise SchemaError(f"{self.kind}: expected {self.n_inputs} features, got shape {np.shape(X)}")
        return x, single

    def predict_proba(self, X):
        x, single = self._check(X)
        p = self._proba(x)
        return float(p[0]) if single else p

    def predict(self, X):
        p = self.predict_proba(X)
        return p > THRESHOLD

    def _proba(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


_REGISTRY: dict[str, type] = {}


def register(cls):
    _REGISTRY[cls.kind] = cls
    return cls


def classifier_from_dict(d: dict, schema_hash: str | None = None) -> Classifier:
    if schema_hash is not None and d.get("schema_hash") not in (None, schema_hash):
        raise SchemaError(f"classifier was trained on schema {d.get('schema_hash')}, data has {schema_hash}")
    try:
        cls = _REGISTRY[d["kind"]]
    except KeyError:
        raise SchemaError(f"unknown classifier kind {d.get('kind')!r}") from None
    return cls.from_dict(d)


def save_classifier(model: Classifier, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict()))


def load_classifier(path, schema_hash: str | None = None) -> Classifier:
    return classifier_from_dict(json.loads(Path(path).read_text()), schema_hash)
