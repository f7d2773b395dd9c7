"""Dense ReLU network with a sigmoid output, trained with Adam on cross-entropy.

Default hidden widths are 64, 32, 16, 16, 8.  Weights start from a
rectangular identity with a little seeded noise; inputs are standardized
with training-set statistics stored in the model.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import DataError, NumericError
from .base import Classifier, register

HIDDEN = (64, 32, 16, 16, 8)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 100
    batch_size: int = 64
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    hidden: tuple[int, ...] = HIDDEN
    init_noise: float = 1e-3

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not self.learning_rate > 0:
            raise DataError("learning_rate must be > 0")
        if self.epochs < 1:
            raise DataError("epochs must be >= 1")
        if self.batch_size < 1:
            raise DataError("batch_size must be >= 1")


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@register
class MlpModel(Classifier):
    kind = "mlp"

    def __init__(self, weights, biases, mean=None, scale=None, hyperparameters=None, schema_hash=None):
        self.weights = [np.asarray(w, dtype=float) for w in weights]
        self.biases = [np.asarray(b, dtype=float) for b in biases]
        n_in = self.weights[0].shape[0]
        super().__init__(n_in, hyperparameters, schema_hash)
        self.mean = np.zeros(n_in) if mean is None else np.asarray(mean, dtype=float)
        self.scale = np.ones(n_in) if scale is None else np.asarray(scale, dtype=float)
        self.loss_history: list[float] = []
        for a, b in zip(self.weights[:-1], self.weights[1:]):
            if a.shape[1] != b.shape[0]:
                raise DataError("layer shapes do not chain")
        if self.weights[-1].shape[1] != 1:
            raise DataError("output layer must have a single unit")

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def logits(self, x: np.ndarray) -> np.ndarray:
        h = (x - self.mean) / self.scale
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ w + b, 0.0)
        return (h @ self.weights[-1] + self.biases[-1])[:, 0]

    def _proba(self, x):
        return sigmoid(self.logits(x))

    def params(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "hyperparameters": self.hyperparameters,
            "parameters": {
                "weights": [w.tolist() for w in self.weights],
                "biases": [b.tolist() for b in self.biases],
            },
            "standardization": {"mean": self.mean.tolist(), "scale": self.scale.tolist()},
            "schema_hash": self.schema_hash,
            "loss_history": self.loss_history,
        }

    @classmethod
    def from_dict(cls, d) -> "MlpModel":
        p, s = d["parameters"], d["standardization"]
        m = cls(p["weights"], p["biases"], s["mean"], s["scale"], d.get("hyperparameters"), d.get("schema_hash"))
        m.loss_history = list(d.get("loss_history", []))
        return m


def init_mlp(n_inputs: int, seed: int, hidden=HIDDEN, noise: float = 1e-3) -> MlpModel:
    """Rectangular-identity weights plus ``noise``-scaled Gaussian jitter; zero biases."""
    if n_inputs < 1:
        raise DataError("n_inputs must be >= 1")
    rng = np.random.default_rng(seed)
    widths = [n_inputs, *hidden, 1]
    weights, biases = [], []
    for a, b in zip(widths[:-1], widths[1:]):
        w = np.eye(a, b)
        if noise:
            w = w + noise * rng.standard_normal((a, b))
        weights.append(w)
        biases.append(np.zeros(b))
    return MlpModel(weights, biases)


def mlp_forward(model: MlpModel, s) -> float:
    return model.predict_proba(np.asarray(s, dtype=float))


def _loss(logits: np.ndarray, y: np.ndarray) -> float:
    # mean binary cross-entropy from logits: softplus(z) - y z
    return float(np.mean(np.logaddexp(0.0, logits) - y * logits))


def mlp_loss(model: MlpModel, X, y) -> float:
    x = np.atleast_2d(np.asarray(X, dtype=float))
    return _loss(model.logits(x), np.asarray(y, dtype=float))


def mlp_gradient(model: MlpModel, X, y) -> list[np.ndarray]:
    """Gradient of mean cross-entropy, ordered like ``model.params()``.

    The ReLU derivative at exactly 0 is taken as 0.
    """
    x = np.atleast_2d(np.asarray(X, dtype=float))
    t = np.asarray(y, dtype=float).reshape(-1)
    if x.shape[0] == 0:
        raise DataError("empty batch")
    acts = [(x - model.mean) / model.scale]
    pres = []
    for w, b in zip(model.weights[:-1], model.biases[:-1]):
        z = acts[-1] @ w + b
        pres.append(z)
        acts.append(np.maximum(z, 0.0))
    logits = (acts[-1] @ model.weights[-1] + model.biases[-1])[:, 0]
    delta = ((sigmoid(logits) - t) / x.shape[0])[:, None]
    grads_w, grads_b = [], []
    for k in range(len(model.weights) - 1, -1, -1):
        grads_w.append(acts[k].T @ delta)
        grads_b.append(delta.sum(axis=0))
        if k > 0:
            delta = (delta @ model.weights[k].T) * (pres[k - 1] > 0)
    grads_w.reverse()
    grads_b.reverse()
    return [g for pair in zip(grads_w, grads_b) for g in pair]


def train_mlp(X, y, config: TrainConfig = TrainConfig(), schema_hash: str | None = None) -> MlpModel:
    """Mini-batch Adam from the identity initialization.

    ``loss_history`` holds the full-data loss before training and after each
    epoch.
    """
    x = np.asarray(X, dtype=float)
    t = np.asarray(y, dtype=bool)
    if x.ndim != 2 or x.shape[0] != t.shape[0]:
        raise DataError("X must be 2-D with one label per row")
    if t.all() or not t.any():
        raise DataError("training data must contain both classes")
    rng = np.random.default_rng(config.seed)
    model = init_mlp(x.shape[1], int(rng.integers(2**31)), config.hidden, config.init_noise)
    model.mean = x.mean(axis=0)
    sd = x.std(axis=0)
    model.scale = np.where(sd > 0, sd, 1.0)
    model.hyperparameters = asdict(config)
    model.hyperparameters["hidden"] = list(config.hidden)
    model.schema_hash = schema_hash
    tf = t.astype(float)

    params = model.params()
    m1 = [np.zeros_like(p) for p in params]
    m2 = [np.zeros_like(p) for p in params]
    b1, b2, lr, eps = config.beta1, config.beta2, config.learning_rate, config.eps
    step = 0
    history = [mlp_loss(model, x, tf)]
    n = x.shape[0]
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            grads = mlp_gradient(model, x[idx], tf[idx])
            step += 1
            c1 = 1.0 - b1**step
            c2 = 1.0 - b2**step
            for p, g, m, v in zip(params, grads, m1, m2):
                m *= b1
                m += (1.0 - b1) * g
                v *= b2
                v += (1.0 - b2) * g * g
                p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
        loss = mlp_loss(model, x, tf)
        if not np.isfinite(loss):
            raise NumericError("MLP training diverged (non-finite loss)")
        history.append(loss)
    model.loss_history = history
    return model
