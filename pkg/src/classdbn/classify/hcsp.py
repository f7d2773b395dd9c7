"""Tree-augmented naive Bayes grown by hill-climbing super-parent search.

Features are discretized into equal-frequency bins.  Starting from naive
Bayes, each round tries every feature as the super-parent of all current
orphans (features whose only parent is the class), keeps the best promotion
if stratified cross-validated accuracy improves, then lets each newly
adopted orphan drop the arc again when that helps.  CPTs use +1 smoothing.
"""

from __future__ import annotations

import logging

import numpy as np

from ..errors import DataError
from .base import Classifier, register

log = logging.getLogger(__name__)

NO_PARENT = -1


def discretize_fit(X, bins: int = 3) -> list[np.ndarray]:
    """Equal-frequency interior edges per feature, strictly increasing.

    A constant feature gets no edges (one bin) and carries no information.
    """
    if bins < 2:
        raise DataError("bins must be >= 2")
    x = np.asarray(X, dtype=float)
    if x.ndim != 2 or x.shape[0] == 0:
        raise DataError("X must be a non-empty 2-D array")
    n = x.shape[0]
    edges = []
    for col in x.T:
        s = np.sort(col)
        cut = []
        for k in range(1, bins):
            i = int(round(n * k / bins))
            if 0 < i < n:
                cut.append(s[i - 1] + (s[i] - s[i - 1]) / 2.0)
        e = np.unique(np.asarray(cut))
        e = e[(e > s[0]) & (e <= s[-1])]
        edges.append(e)
    return edges


def discretize_apply(edges, X) -> np.ndarray:
    """Bin index per value; anything outside the training range lands in an end bin."""
    x = np.asarray(X, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != len(edges):
        raise DataError(f"expected {len(edges)} features, got {x.shape[1]}")
    out = np.column_stack([np.searchsorted(e, x[:, j], side="right") for j, e in enumerate(edges)])
    return out[0] if single else out


def _log_cpt(xd, y, child, parent, cards, rows) -> np.ndarray:
    """Smoothed log P(child | class, parent) from ``rows``; shape (2, card_parent, card_child)."""
    cp = cards[parent] if parent != NO_PARENT else 1
    pv = xd[rows, parent] if parent != NO_PARENT else np.zeros(rows.size, dtype=int)
    counts = np.ones((2, cp, cards[child]))
    np.add.at(counts, (y[rows], pv, xd[rows, child]), 1.0)
    return np.log(counts / counts.sum(axis=2, keepdims=True))


def _log_prior(y, rows) -> np.ndarray:
    c = np.bincount(y[rows], minlength=2) + 1.0
    return np.log(c / c.sum())


def stratified_folds(y: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    fold = np.empty(y.size, dtype=int)
    for c in (0, 1):
        idx = np.flatnonzero(y == c)
        idx = idx[rng.permutation(idx.size)]
        fold[idx] = np.arange(idx.size) % k
    return fold


class _CvScorer:
    """Held-out log-likelihood terms cached per (feature, parent)."""

    def __init__(self, xd, y, cards, folds):
        self.xd, self.y, self.cards = xd, y, cards
        self.folds = folds
        k = folds.max() + 1
        self.splits = [(np.flatnonzero(folds != f), np.flatnonzero(folds == f)) for f in range(k)]
        self.prior = np.zeros((y.size, 2))
        for tr, te in self.splits:
            self.prior[te] = _log_prior(y, tr)
        self.cache: dict[tuple[int, int], np.ndarray] = {}

    def term(self, child: int, parent: int) -> np.ndarray:
        key = (child, parent)
        t = self.cache.get(key)
        if t is None:
            t = np.zeros((self.y.size, 2))
            for tr, te in self.splits:
                table = _log_cpt(self.xd, self.y, child, parent, self.cards, tr)
                pv = self.xd[te, parent] if parent != NO_PARENT else np.zeros(te.size, dtype=int)
                t[te] = table[:, pv, self.xd[te, child]].T
            self.cache[key] = t
        return t

    def accuracy(self, parents) -> float:
        total = self.prior.copy()
        for i, p in enumerate(parents):
            total += self.term(i, p)
        pred = total[:, 1] > total[:, 0]
        return float(np.mean(pred == self.y.astype(bool)))


def _ancestors(parents, node) -> set[int]:
    out = set()
    p = parents[node]
    while p != NO_PARENT and p not in out:
        out.add(p)
        p = parents[p]
    return out


@register
class HcspTanModel(Classifier):
    kind = "hcsp"

    def __init__(self, edges, parents, log_prior, log_cpts, hyperparameters=None, schema_hash=None):
        self.edges = [np.asarray(e, dtype=float) for e in edges]
        super().__init__(len(self.edges), hyperparameters, schema_hash)
        self.parents = [int(p) for p in parents]
        self.log_prior = np.asarray(log_prior, dtype=float)
        self.log_cpts = [np.asarray(t, dtype=float) for t in log_cpts]

    @property
    def cards(self) -> list[int]:
        return [e.size + 1 for e in self.edges]

    @property
    def prior(self) -> np.ndarray:
        return np.exp(self.log_prior)

    @property
    def cpts(self) -> list[np.ndarray]:
        return [np.exp(t) for t in self.log_cpts]

    def log_joint(self, xd: np.ndarray) -> np.ndarray:
        """``log P(class, x)`` for discretized rows, shape ``(m, 2)``."""
        out = np.tile(self.log_prior, (xd.shape[0], 1))
        zeros = np.zeros(xd.shape[0], dtype=int)
        for i, (p, table) in enumerate(zip(self.parents, self.log_cpts)):
            pv = xd[:, p] if p != NO_PARENT else zeros
            out += table[:, pv, xd[:, i]].T
        return out

    def posterior_discrete(self, xd) -> np.ndarray:
        lj = self.log_joint(np.atleast_2d(np.asarray(xd, dtype=int)))
        return 1.0 / (1.0 + np.exp(lj[:, 0] - lj[:, 1]))

    def _proba(self, x):
        return self.posterior_discrete(discretize_apply(self.edges, x))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "hyperparameters": self.hyperparameters,
            "parameters": {
                "edges": [e.tolist() for e in self.edges],
                "parents": self.parents,
                "log_prior": self.log_prior.tolist(),
                "log_cpts": [t.tolist() for t in self.log_cpts],
            },
            "standardization": None,
            "schema_hash": self.schema_hash,
        }

    @classmethod
    def from_dict(cls, d) -> "HcspTanModel":
        p = d["parameters"]
        return cls(p["edges"], p["parents"], p["log_prior"], p["log_cpts"], d.get("hyperparameters"), d.get("schema_hash"))


def fit_tables(xd, y, cards, parents):
    rows = np.arange(y.size)
    prior = _log_prior(y, rows)
    tables = [_log_cpt(xd, y, i, p, cards, rows) for i, p in enumerate(parents)]
    return prior, tables


def hcsp_search(xd, y, cards, folds: int = 5, seed: int = 0, min_gain: float = 1e-3) -> tuple[list[int], list[float]]:
    """Super-parent hill climbing; returns the parent array and the accepted CV accuracies.

    A change must raise CV accuracy by more than ``min_gain`` to count, which
    keeps fold noise from adding arcs between independent features.
    """
    y = np.asarray(y, dtype=int)
    if np.bincount(y, minlength=2).min() < folds:
        raise DataError(f"each class needs at least {folds} rows for {folds}-fold CV")
    rng = np.random.default_rng(seed)
    scorer = _CvScorer(xd, y, cards, stratified_folds(y, folds, rng))
    d = xd.shape[1]
    parents = [NO_PARENT] * d
    acc = scorer.accuracy(parents)
    history = [acc]
    informative = [c > 1 for c in cards]
    while True:
        orphans = [i for i in range(d) if parents[i] == NO_PARENT and informative[i]]
        best = None
        for sp in range(d):
            if not informative[sp]:
                continue
            kids = [o for o in orphans if o != sp and o not in _ancestors(parents, sp)]
            if not kids:
                continue
            trial = list(parents)
            for o in kids:
                trial[o] = sp
            a = scorer.accuracy(trial)
            if best is None or a > best[0]:
                best = (a, sp, kids, trial)
        if best is None or best[0] <= acc + min_gain:
            break
        acc, sp, kids, parents = best
        log.debug("super-parent %d adopted %s (cv acc %.4f)", sp, kids, acc)
        for o in kids:
            trial = list(parents)
            trial[o] = NO_PARENT
            a = scorer.accuracy(trial)
            if a > acc + min_gain:
                parents, acc = trial, a
        history.append(acc)
    return parents, history


def train_hcsp(X_discrete, y, cards=None, folds: int = 5, seed: int = 0, min_gain: float = 1e-3, edges=None) -> HcspTanModel:
    """Learn structure by super-parent search, then fit smoothed CPTs on all rows."""
    xd = np.asarray(X_discrete, dtype=int)
    t = np.asarray(y, dtype=bool)
    if t.all() or not t.any():
        raise DataError("training data must contain both classes")
    if cards is None:
        cards = [int(c) for c in xd.max(axis=0) + 1] if edges is None else [e.size + 1 for e in edges]
    yi = t.astype(int)
    parents, history = hcsp_search(xd, yi, cards, folds, seed, min_gain)
    prior, tables = fit_tables(xd, yi, cards, parents)
    if edges is None:
        # identity "edges": bin k covers [k - 0.5, k + 0.5)
        edges = [np.arange(c - 1) + 0.5 for c in cards]
    model = HcspTanModel(edges, parents, prior, tables, {"folds": folds, "seed": seed, "min_gain": min_gain})
    model.cv_history = history
    return model


def fit_hcsp(X, y, bins: int = 3, folds: int = 5, seed: int = 0, schema_hash: str | None = None) -> HcspTanModel:
    """Discretize continuous ``X`` and train; the model then accepts raw state vectors."""
    edges = discretize_fit(X, bins)
    xd = discretize_apply(edges, X)
    model = train_hcsp(xd, y, folds=folds, seed=seed, edges=edges)
    model.hyperparameters.update({"bins": bins})
    model.schema_hash = schema_hash
    return model
