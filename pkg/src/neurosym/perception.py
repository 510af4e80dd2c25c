"""Trainable perception: per-position feature vectors -> symbol distributions.

A shallow classifier (linear, or one tanh hidden layer) scores each
position independently; rows are softmaxed into a probability matrix.
Scores are max-shifted and floored before the softmax so no
probability ever reaches zero (priority and MH ratios divide by them).
Updates use the Adam rule with the fixed default step size 5e-4.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .symbols import NUM_SYMBOLS

SCORE_FLOOR = -46.0  # relative to the row max; keeps min prob > exp(-50)
DEFAULT_LR = 5e-4
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class DimensionMismatch(ValueError):
    pass


@dataclass
class PerceptionModel:
    arch: str  # "linear" | "mlp"
    input_dim: int
    hidden: int
    params: dict
    adam_m: dict
    adam_v: dict
    step: int = 0
    lr: float = DEFAULT_LR

    def param_names(self):
        return sorted(self.params)

    def copy(self) -> "PerceptionModel":
        return PerceptionModel(
            self.arch, self.input_dim, self.hidden,
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.adam_m.items()},
            {k: v.copy() for k, v in self.adam_v.items()},
            self.step, self.lr,
        )


def init_model(input_dim=16, arch="linear", hidden=32, seed=0, lr=DEFAULT_LR):
    rng = np.random.default_rng(seed)
    if arch == "linear":
        params = {
            "W": np.zeros((input_dim, NUM_SYMBOLS)),
            "b": np.zeros(NUM_SYMBOLS),
        }
    elif arch == "mlp":
        # random first layer breaks symmetry; zero second layer starts
        # from uniform outputs
        params = {
            "W1": rng.normal(0.0, 1.0 / np.sqrt(input_dim), (input_dim, hidden)),
            "b1": np.zeros(hidden),
            "W2": np.zeros((hidden, NUM_SYMBOLS)),
            "b2": np.zeros(NUM_SYMBOLS),
        }
    else:
        raise ValueError(f"unknown architecture {arch!r}")
    zeros = {k: np.zeros_like(v) for k, v in params.items()}
    return PerceptionModel(
        arch, input_dim, hidden, params,
        zeros, {k: v.copy() for k, v in zeros.items()}, 0, lr,
    )


def _scores(m: PerceptionModel, X: np.ndarray):
    """Raw scores for stacked feature rows X (n, d); returns (scores, hidden)."""
    if X.ndim != 2 or X.shape[1] != m.input_dim:
        raise DimensionMismatch(
            f"expected features of dimension {m.input_dim}, got shape {X.shape}"
        )
    if m.arch == "linear":
        return X @ m.params["W"] + m.params["b"], None
    h = np.tanh(X @ m.params["W1"] + m.params["b1"])
    return h @ m.params["W2"] + m.params["b2"], h


def _softmax_floored(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=1, keepdims=True)
    np.clip(shifted, SCORE_FLOOR, None, out=shifted)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def forward(m: PerceptionModel, x) -> np.ndarray:
    """Row-stochastic (l, 14) probability matrix for a feature sequence."""
    return _softmax_floored(_scores(m, np.asarray(x, dtype=np.float64))[0])


def _backward(m: PerceptionModel, X, hidden, dscores) -> dict:
    if m.arch == "linear":
        return {"W": X.T @ dscores, "b": dscores.sum(axis=0)}
    dh = (dscores @ m.params["W2"].T) * (1.0 - hidden**2)
    return {
        "W1": X.T @ dh,
        "b1": dh.sum(axis=0),
        "W2": hidden.T @ dscores,
        "b2": dscores.sum(axis=0),
    }


def weighted_nll_gradient(m: PerceptionModel, X, labels, weights) -> dict:
    """Gradient of sum_i weights[i] * (-log p(labels[i] | X[i])).

    X stacks one row per symbol position; positions from different
    examples may be mixed freely (the model factorizes over positions).
    The score floor is treated as inactive (it only binds for extreme
    logit gaps).
    """
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    weights = np.asarray(weights, dtype=np.float64)
    scores, hidden = _scores(m, X)
    probs = _softmax_floored(scores)
    dscores = probs.copy()
    dscores[np.arange(len(labels)), labels] -= 1.0
    dscores *= weights[:, None]
    return _backward(m, X, hidden, dscores)


def nll_gradient(m: PerceptionModel, x, z) -> dict:
    """Gradient of -log p(z | x), summed over positions."""
    x = np.asarray(x, dtype=np.float64)
    if len(z) != x.shape[0]:
        raise DimensionMismatch(f"|z|={len(z)} but {x.shape[0]} feature rows")
    return weighted_nll_gradient(m, x, list(z), np.ones(len(z)))


def nll(m: PerceptionModel, x, z) -> float:
    pm = forward(m, x)
    return float(-np.log(pm[np.arange(len(z)), list(z)]).sum())


def apply_update(m: PerceptionModel, grad: dict, scale: float = 1.0) -> None:
    """Adam update in place; ``scale`` multiplies the gradient."""
    m.step += 1
    t = m.step
    for name, p in m.params.items():
        g = scale * grad[name]
        m.adam_m[name] = ADAM_BETA1 * m.adam_m[name] + (1 - ADAM_BETA1) * g
        m.adam_v[name] = ADAM_BETA2 * m.adam_v[name] + (1 - ADAM_BETA2) * g * g
        mhat = m.adam_m[name] / (1 - ADAM_BETA1**t)
        vhat = m.adam_v[name] / (1 - ADAM_BETA2**t)
        p -= m.lr * mhat / (np.sqrt(vhat) + ADAM_EPS)


def save_checkpoint(m: PerceptionModel, path) -> None:
    arrays = {f"param_{k}": v for k, v in m.params.items()}
    arrays.update({f"adam_m_{k}": v for k, v in m.adam_m.items()})
    arrays.update({f"adam_v_{k}": v for k, v in m.adam_v.items()})
    np.savez(
        path,
        format_version=np.int64(1),
        arch=np.bytes_(m.arch),
        input_dim=np.int64(m.input_dim),
        hidden=np.int64(m.hidden),
        step=np.int64(m.step),
        lr=np.float64(m.lr),
        **arrays,
    )


def load_checkpoint(path) -> PerceptionModel:
    with np.load(path) as data:
        if int(data["format_version"]) != 1:
            raise ValueError("unknown checkpoint format version")
        params, adam_m, adam_v = {}, {}, {}
        for key in data.files:
            if key.startswith("param_"):
                params[key[6:]] = data[key]
            elif key.startswith("adam_m_"):
                adam_m[key[7:]] = data[key]
            elif key.startswith("adam_v_"):
                adam_v[key[7:]] = data[key]
        return PerceptionModel(
            data["arch"].item().decode(),
            int(data["input_dim"]), int(data["hidden"]),
            params, adam_m, adam_v, int(data["step"]), float(data["lr"]),
        )
