"""SMOTE oversampling with majority undersampling.

``perc_over`` / ``perc_under`` follow the classic percentages: with
``perc_over=200`` every minority row spawns two synthetic rows, and
``perc_under=200`` keeps twice as many majority rows as synthetic rows were
made.  Output = original minority + synthetic minority + sampled majority.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigError, DataError


@dataclass(frozen=True)
class SmoteConfig:
    k_neighbors: int = 5
    perc_over: float = 200.0
    perc_under: float = 200.0
    seed: int = 0

    def __post_init__(self):
        if self.k_neighbors < 1:
            raise ConfigError("k_neighbors must be >= 1")
        if self.perc_over < 0 or self.perc_under < 0:
            raise ConfigError("SMOTE percentages must be >= 0")


@dataclass(frozen=True)
class SmoteResult:
    X: np.ndarray
    y: np.ndarray
    synthetic: np.ndarray
    # row indices into the input X; -1 where not applicable
    source: np.ndarray
    neighbor: np.ndarray
    gap: np.ndarray

    def __iter__(self):
        return iter((self.X, self.y, self.synthetic))


def planned_counts(n_minority: int, config: SmoteConfig) -> tuple[int, int]:
    """(synthetic rows, majority rows kept) implied by the percentages.

    With ``perc_over`` 0 no synthetic rows exist, and ``perc_under`` is
    taken relative to the minority count instead.
    """
    if config.perc_over < 100:
        n_syn = int(config.perc_over / 100.0 * n_minority)
    else:
        n_syn = int(config.perc_over // 100) * n_minority
    base = n_syn if n_syn > 0 else n_minority
    return n_syn, int(config.perc_under / 100.0 * base)


def _binary_columns(x: np.ndarray) -> np.ndarray:
    return np.array([np.isin(np.unique(col), (0.0, 1.0)).all() for col in x.T], dtype=bool)


def _minority_neighbors(zm: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` nearest other rows of ``zm`` (self excluded)."""
    _, idx = cKDTree(zm).query(zm, k=k + 1)
    out = np.empty((zm.shape[0], k), dtype=int)
    for i, row in enumerate(idx):
        row = row[row != i]
        out[i] = row[:k]
    return out


def smote(X, y, config: SmoteConfig = SmoteConfig(), gap: float | None = None) -> SmoteResult:
    """Rebalance ``(X, y)``; the minority class is whichever label is rarer.

    Neighbours are found among minority rows with Euclidean distance on
    features standardized over ``X``.  Each synthetic row is
    ``x + lam * (neighbor - x)`` with ``lam ~ U(0, 1)`` (or the fixed
    ``gap``).  Columns that are 0/1 in the input are rounded back to 0/1.
    """
    x = np.asarray(X, dtype=float)
    labels = np.asarray(y, dtype=bool)
    if x.ndim != 2 or x.shape[0] != labels.shape[0]:
        raise DataError("X must be 2-D with one label per row")
    minority_label = bool(labels.sum() * 2 < labels.size)
    min_idx = np.flatnonzero(labels == minority_label)
    maj_idx = np.flatnonzero(labels != minority_label)
    n_min = min_idx.size
    if n_min < 2:
        raise DataError("SMOTE needs at least 2 minority rows")
    k = config.k_neighbors
    if n_min <= k:
        raise DataError(f"minority class has {n_min} rows; lower k_neighbors below {n_min}")
    rng = np.random.default_rng(config.seed)

    sd = x.std(axis=0)
    z = (x - x.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
    knn = _minority_neighbors(z[min_idx], k)

    n_syn, n_maj = planned_counts(n_min, config)
    if config.perc_over < 100:
        seeds = np.sort(rng.choice(n_min, n_syn, replace=False))
    else:
        seeds = np.repeat(np.arange(n_min), int(config.perc_over // 100))
    nb = knn[seeds, rng.integers(0, k, size=seeds.size)]
    lam = np.full(seeds.size, float(gap)) if gap is not None else rng.random(seeds.size)
    base = x[min_idx[seeds]]
    other = x[min_idx[nb]]
    synth = base + lam[:, None] * (other - base)
    binary = _binary_columns(x)
    synth[:, binary] = np.round(synth[:, binary])

    if n_maj <= maj_idx.size:
        keep = np.sort(rng.choice(maj_idx, n_maj, replace=False))
    else:
        keep = np.sort(rng.choice(maj_idx, n_maj, replace=True))

    X_out = np.vstack([x[min_idx], synth, x[keep]])
    y_out = np.concatenate(
        [np.full(n_min + seeds.size, minority_label), np.full(keep.size, not minority_label)]
    )
    synthetic = np.concatenate([np.zeros(n_min, bool), np.ones(seeds.size, bool), np.zeros(keep.size, bool)])
    none = np.full(n_min, -1)
    source = np.concatenate([min_idx, min_idx[seeds], keep])
    neighbor = np.concatenate([none, min_idx[nb], np.full(keep.size, -1)])
    gaps = np.concatenate([np.full(n_min, np.nan), lam, np.full(keep.size, np.nan)])
    return SmoteResult(X_out, y_out, synthetic, source, neighbor, gaps)
