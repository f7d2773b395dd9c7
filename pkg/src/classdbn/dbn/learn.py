"""BIC-scored hill climbing and closed-form linear-Gaussian fitting."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..cohort import TransitionDataset
from ..errors import DataError
from .model import DbnModel, LinearGaussianCpd
from .structure import T0, T1, DbnStructure, SliceNode, has_path

log = logging.getLogger(__name__)

VAR_FLOOR = 1e-9
RIDGE_SCALE = 1e-6
COND_LIMIT = 1e12
_MIN_GAIN = 1e-9


def _ridge(xtx: np.ndarray) -> np.ndarray:
    k = xtx.shape[0]
    lam = RIDGE_SCALE * max(np.trace(xtx), 1.0) / k
    return xtx + lam * np.eye(k)


def _solve(xtx: np.ndarray, xty: np.ndarray) -> tuple[np.ndarray, bool]:
    """Normal-equation solve with ridge fallback; returns ``(beta, ridged)``."""
    if xtx.size == 0:
        return np.zeros(0), False
    if np.linalg.cond(xtx) < COND_LIMIT:
        try:
            return np.linalg.solve(xtx, xty), False
        except np.linalg.LinAlgError:
            pass
    return np.linalg.solve(_ridge(xtx), xty), True


class _Sufficient:
    """Centered cross-product matrix of all ``2n`` transition columns.

    Every node regression needs only a sub-block of it, so scoring a parent
    set costs O(k^3) regardless of N.
    """

    def __init__(self, data: TransitionDataset):
        rows = np.asarray(data.rows, dtype=float)
        self.n_rows = rows.shape[0]
        self.n = data.n_features
        self.mean = rows.mean(axis=0)
        centered = rows - self.mean
        self.cross = centered.T @ centered

    def rss(self, child: int, parents: Sequence[int]) -> float:
        y = child
        if not parents:
            return float(self.cross[y, y])
        p = list(parents)
        sxx = self.cross[np.ix_(p, p)]
        sxy = self.cross[p, y]
        beta, _ = _solve(sxx, sxy)
        rss = self.cross[y, y] - 2.0 * beta @ sxy + beta @ sxx @ beta
        return float(max(rss, 0.0))

    def bic(self, child: int, parents: Sequence[int]) -> float:
        n_rows = self.n_rows
        var = max(self.rss(child, parents) / n_rows, VAR_FLOOR)
        loglik = -0.5 * n_rows * (math.log(2.0 * math.pi * var) + 1.0)
        k = len(parents) + 2
        return loglik - 0.5 * k * math.log(n_rows)


def _column(node: SliceNode, variables: Sequence[str]) -> int:
    try:
        i = list(variables).index(node.variable)
    except ValueError:
        raise DataError(f"unknown variable {node.variable!r}") from None
    return i if node.slice == T0 else len(variables) + i


def _check_parents(child: SliceNode, parents: Sequence[SliceNode]) -> None:
    if child.slice != T1:
        raise DataError(f"child {child} must be a t1 node")
    if len(set(parents)) != len(parents):
        raise DataError(f"duplicate parents for {child}")
    if child in parents:
        raise DataError(f"{child} cannot be its own parent")


def bic_score(child: SliceNode, parents: Sequence[SliceNode], data: TransitionDataset) -> float:
    """Gaussian log-likelihood of the child regression minus ``(k/2) ln N``.

    ``k`` counts the coefficients plus intercept and variance.
    """
    parents = list(parents)
    _check_parents(child, parents)
    if len(data) < len(parents) + 2:
        raise DataError(f"need at least {len(parents) + 2} rows, have {len(data)}")
    names = data.schema.names
    stats = _Sufficient(data)
    return stats.bic(_column(child, names), [_column(p, names) for p in parents])


def total_score(structure: DbnStructure, data: TransitionDataset) -> float:
    stats = _Sufficient(data)
    names = data.schema.names
    return sum(
        stats.bic(_column(c, names), [_column(p, names) for p in pa])
        for c, pa in structure.parent_map().items()
    )


# ----------------------------------------------------------------------------
# hill climbing


@dataclass
class SearchResult:
    structure: DbnStructure
    score: float
    traces: list[list[float]] = field(default_factory=list)
    moves: list[list[tuple]] = field(default_factory=list)


class _Climber:
    """Greedy add/delete/reverse search over integer-coded parent sets.

    Node ``j < n`` is variable ``j`` at t0, ``n + j`` is variable ``j`` at t1.
    Only t1 nodes have parents, so the state is ``parents[j]`` for each t1
    variable ``j``.
    """

    def __init__(self, stats: _Sufficient, names: Sequence[str], max_parents: int):
        self.stats = stats
        self.names = list(names)
        self.n = len(names)
        self.max_parents = max_parents
        self.cache: dict[tuple[int, frozenset], float] = {}
        # deterministic tie-break order: (child name, parent label)
        self.child_order = sorted(range(self.n), key=lambda j: self.names[j])
        self.node_order = sorted(range(2 * self.n), key=self._label)

    def _label(self, node: int) -> str:
        n = self.n
        return f"{self.names[node % n]}_{T0 if node < n else T1}"

    def score(self, child: int, parents: frozenset) -> float:
        key = (child, parents)
        s = self.cache.get(key)
        if s is None:
            s = self.stats.bic(self.n + child, sorted(parents))
            self.cache[key] = s
        return s

    def _intra_children(self, parents) -> dict[int, list[int]]:
        kids: dict[int, list[int]] = {}
        n = self.n
        for j, pa in enumerate(parents):
            for u in pa:
                if u >= n:
                    kids.setdefault(u - n, []).append(j)
        return kids

    def climb(self, parents: list[frozenset]) -> tuple[list[frozenset], list[float], list[tuple]]:
        n = self.n
        scores = [self.score(j, parents[j]) for j in range(n)]
        trace = [sum(scores)]
        moves = []
        while True:
            kids = self._intra_children(parents)
            best_gain, best = _MIN_GAIN, None
            for j in self.child_order:
                pa = parents[j]
                for u in self.node_order:
                    if u == n + j:
                        continue
                    if u in pa:
                        gain = self.score(j, pa - {u}) - scores[j]
                        if gain > best_gain:
                            best_gain, best = gain, ("delete", u, j)
                        if u >= n:
                            i = u - n
                            if len(parents[i]) < self.max_parents:
                                # reversed arc j->i closes a cycle iff i still reaches j without u->j
                                kids[i].remove(j)
                                cyclic = has_path(kids, i, j)
                                kids[i].append(j)
                                if not cyclic:
                                    gain = (
                                        self.score(j, pa - {u})
                                        - scores[j]
                                        + self.score(i, parents[i] | {n + j})
                                        - scores[i]
                                    )
                                    if gain > best_gain:
                                        best_gain, best = gain, ("reverse", u, j)
                    elif len(pa) < self.max_parents:
                        if u >= n and has_path(kids, j, u - n):
                            continue
                        gain = self.score(j, pa | {u}) - scores[j]
                        if gain > best_gain:
                            best_gain, best = gain, ("add", u, j)
            if best is None:
                return parents, trace, moves
            kind, u, j = best
            if kind == "add":
                parents[j] = parents[j] | {u}
            elif kind == "delete":
                parents[j] = parents[j] - {u}
            else:
                i = u - n
                parents[j] = parents[j] - {u}
                parents[i] = parents[i] | {n + j}
                scores[i] = self.score(i, parents[i])
            scores[j] = self.score(j, parents[j])
            trace.append(sum(scores))
            moves.append((kind, self._label(u), self._label(n + j)))

    def random_start(self, rng: np.random.Generator, density: float) -> list[frozenset]:
        n = self.n
        order = rng.permutation(n)
        rank = {int(v): r for r, v in enumerate(order)}
        parents = []
        for j in range(n):
            cand = [u for u in range(n) if rng.random() < density]
            cand += [n + i for i in range(n) if rank[i] < rank[j] and rng.random() < density / 2]
            if len(cand) > self.max_parents:
                cand = list(rng.choice(cand, self.max_parents, replace=False))
            parents.append(frozenset(int(c) for c in cand))
        return parents

    def to_structure(self, parents: list[frozenset]) -> DbnStructure:
        n = self.n
        arcs = set()
        for j, pa in enumerate(parents):
            child = SliceNode(self.names[j], T1)
            for u in pa:
                arcs.add((SliceNode(self.names[u % n], T0 if u < n else T1), child))
        return DbnStructure(tuple(self.names), frozenset(arcs), self.max_parents)


def hill_climb(
    data: TransitionDataset,
    max_parents: int = 5,
    restarts: int = 1,
    seed: int = 0,
    start_density: float = 0.1,
) -> SearchResult:
    """Hill climbing from the empty graph plus ``restarts - 1`` random starts.

    Returns the best structure with every restart's score trace.
    """
    if len(data) == 0:
        raise DataError("transition dataset is empty")
    if max_parents < 1:
        raise DataError("max_parents must be >= 1")
    if restarts < 1:
        raise DataError("restarts must be >= 1")
    if len(data) < max_parents + 2:
        max_parents = max(1, len(data) - 2)
    climber = _Climber(_Sufficient(data), data.schema.names, max_parents)
    rng = np.random.default_rng(seed)
    traces, all_moves = [], []
    best_parents, best_score = None, -math.inf
    for r in range(restarts):
        start = [frozenset()] * climber.n if r == 0 else climber.random_start(rng, start_density)
        parents, trace, moves = climber.climb(list(start))
        log.debug("restart %d: %d moves, score %.3f", r, len(moves), trace[-1])
        traces.append(trace)
        all_moves.append(moves)
        if trace[-1] > best_score:
            best_parents, best_score = parents, trace[-1]
    return SearchResult(climber.to_structure(best_parents), best_score, traces, all_moves)


def learn_structure(
    data: TransitionDataset, max_parents: int = 5, restarts: int = 1, seed: int = 0
) -> DbnStructure:
    return hill_climb(data, max_parents, restarts, seed).structure


# ----------------------------------------------------------------------------
# parameters


def fit_node(y: np.ndarray, x: np.ndarray) -> tuple[float, np.ndarray, float]:
    """Least-squares fit of ``y`` on ``[1, x]``; returns intercept, coefficients, variance."""
    n_rows = y.shape[0]
    design = np.hstack([np.ones((n_rows, 1)), x])
    xtx = design.T @ design
    if np.linalg.cond(xtx) < COND_LIMIT:
        beta = np.linalg.lstsq(design, y, rcond=None)[0]
    else:
        beta = np.linalg.solve(_ridge(xtx), design.T @ y)
    resid = y - design @ beta
    var = max(float(resid @ resid) / n_rows, VAR_FLOOR)
    return float(beta[0]), beta[1:], var


def fit_parameters(structure: DbnStructure, data: TransitionDataset, period_hours: float = 4.0) -> DbnModel:
    """One least-squares linear-Gaussian CPD per t1 node of ``structure``."""
    names = data.schema.names
    if list(structure.variables) != list(names):
        raise DataError("structure variables do not match the data schema")
    pmap = structure.parent_map()
    need = max((len(p) for p in pmap.values()), default=0) + 2
    if len(data) < need:
        raise DataError(f"need at least {need} transition rows, have {len(data)}")
    rows = np.asarray(data.rows, dtype=float)
    cpds = []
    for child, parents in pmap.items():
        y = rows[:, _column(child, names)]
        x = rows[:, [_column(p, names) for p in parents]]
        intercept, coef, var = fit_node(y, x)
        cpds.append(LinearGaussianCpd(child, tuple(parents), intercept, tuple(coef), var))
    return DbnModel(data.schema, structure, tuple(cpds), period_hours)
