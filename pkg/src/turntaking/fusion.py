"""Type-level action summaries and the multinomial-logistic fusion model."""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import N_ACTIONS, N_TYPES, Action

log = logging.getLogger(__name__)

FEATURE_LAYOUT = "flag1-last3-wfst3-summary6xT/v1"
SUMMARY_WIDTH = 2 * N_ACTIONS


def feature_dim(n_actions: int = N_ACTIONS, n_types: int = N_TYPES) -> int:
    return n_actions * (2 * n_types + 2) + 1


def summarize_by_type(predictions, last_actions: Sequence[Optional[Action]],
                      types: Sequence[int], n_types: int = N_TYPES,
                      mode: str = "noisy_or") -> np.ndarray:
    """Per-type summary rows ``[any_p, any_i, any_a, hist_p, hist_i, hist_a]``.

    ``any_*`` is the probability that at least one agent of the type takes
    the action (independent agents); ``mode="mean"`` averages instead. The
    histogram holds proportions of last actions, with agents that have not
    acted yet counted as passing. Absent types are all zeros.
    """
    if mode not in ("noisy_or", "mean"):
        raise ValueError(f"unknown summary mode {mode!r}")
    rows = [[0.0] * SUMMARY_WIDTH for _ in range(n_types)]
    counts = [0] * n_types
    noisy = mode == "noisy_or"
    for k, t in enumerate(types):
        row = rows[t]
        p = predictions[k]
        if noisy:
            if counts[t] == 0:
                row[0] = row[1] = row[2] = 1.0  # running product of (1 - p)
            row[0] *= 1.0 - p[0]
            row[1] *= 1.0 - p[1]
            row[2] *= 1.0 - p[2]
        else:
            row[0] += p[0]
            row[1] += p[1]
            row[2] += p[2]
        last = last_actions[k]
        row[N_ACTIONS + (0 if last is None else int(last))] += 1.0
        counts[t] += 1
    for t in range(n_types):
        n = counts[t]
        if n == 0:
            continue
        row = rows[t]
        for j in range(N_ACTIONS):
            row[j] = 1.0 - row[j] if noisy else row[j] / n
            row[N_ACTIONS + j] /= n
    return np.array(rows)


def build_feature_vector(btype: int, last: Optional[Action], wfst_pred,
                         summaries: np.ndarray, n_types: int = N_TYPES) -> np.ndarray:
    x = np.empty(feature_dim(N_ACTIONS, n_types))
    x[0] = btype / (n_types - 1) if n_types > 1 else 0.0
    x[1:4] = 0.0
    x[1 + int(Action.PASS if last is None else last)] = 1.0
    x[4:7] = wfst_pred
    x[7:] = np.asarray(summaries).reshape(-1)
    return x


def softmax_rows(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(weights: np.ndarray, X: np.ndarray, y: np.ndarray) -> float:
    """Mean negative log-likelihood; ``weights`` is 3 x (d + 1) with the bias last."""
    z = X @ weights[:, :-1].T + weights[:, -1]
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-logp[np.arange(len(y)), y].mean())


def cross_entropy_grad(weights: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    p = softmax_rows(X @ weights[:, :-1].T + weights[:, -1])
    p[np.arange(len(y)), y] -= 1.0
    p /= len(y)
    return np.hstack([p.T @ X, p.sum(axis=0)[:, None]])


class FusionModel:
    """Softmax regression over the fixed feature layout."""

    def __init__(self, n_types: int = N_TYPES, weights: Optional[np.ndarray] = None):
        self.n_types = n_types
        self.dim = feature_dim(N_ACTIONS, n_types)
        assert self.dim == N_ACTIONS * (2 * n_types + 2) + 1
        if weights is None:
            weights = np.zeros((N_ACTIONS, self.dim + 1))
        weights = np.array(weights, dtype=float)
        if weights.shape != (N_ACTIONS, self.dim + 1):
            raise ValueError(f"fusion weights must be {(N_ACTIONS, self.dim + 1)}, got {weights.shape}")
        self.weights = weights
        self.frozen = False

    def freeze(self) -> "FusionModel":
        self.frozen = True
        self.weights.flags.writeable = False
        return self

    def logits(self, X: np.ndarray) -> np.ndarray:
        return X @ self.weights[:, :-1].T + self.weights[:, -1]

    def predict(self, x: np.ndarray) -> np.ndarray:
        return softmax_rows(self.logits(np.asarray(x, dtype=float)))

    def train(self, X: np.ndarray, y: np.ndarray, lr: float = 0.05, epochs: int = 20,
              rng: Optional[np.random.Generator] = None) -> list[float]:
        """Per-example SGD on cross-entropy; returns the loss after each epoch."""
        if self.frozen:
            raise RuntimeError("fusion model is frozen")
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=int)
        if len(X) == 0:
            raise ValueError("empty fusion training set")
        rng = rng or np.random.default_rng(0)
        Xb = np.hstack([X, np.ones((len(X), 1))])
        W = self.weights
        losses = []
        for epoch in range(epochs):
            for k in rng.permutation(len(X)):
                xk = Xb[k]
                p = softmax_rows(W @ xk)
                p[y[k]] -= 1.0
                W -= lr * np.outer(p, xk)
            loss = cross_entropy(W, X, y)
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite fusion loss at epoch {epoch} "
                                         f"(lr={lr}, max|W|={np.abs(W).max():.3g})")
            log.debug("fusion epoch %d loss %.5f", epoch, loss)
            losses.append(loss)
        return losses

    def to_dict(self) -> dict:
        return {"layout": FEATURE_LAYOUT, "n_types": self.n_types,
                "weights": self.weights[:, :-1].tolist(), "bias": self.weights[:, -1].tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "FusionModel":
        if d.get("layout") != FEATURE_LAYOUT:
            raise ValueError(f"unsupported feature layout {d.get('layout')!r}")
        W = np.hstack([np.asarray(d["weights"], float), np.asarray(d["bias"], float)[:, None]])
        return cls(d["n_types"], W)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "FusionModel":
        return cls.from_dict(json.loads(Path(path).read_text())).freeze()


def refine(wfst_preds: np.ndarray, last_actions, types, fusion: Optional[FusionModel],
           mode: str = "noisy_or") -> tuple[np.ndarray, np.ndarray]:
    """One pass of summarize -> fuse -> re-summarize over the rule agents.

    Returns the refined per-agent distributions and their type summaries.
    Without a fusion model the WFST predictions pass through unchanged.
    """
    if fusion is None or len(types) == 0:
        return (np.asarray(wfst_preds, dtype=float).reshape(-1, N_ACTIONS),
                summarize_by_type(wfst_preds, last_actions, types, mode=mode))
    first = summarize_by_type(wfst_preds, last_actions, types, fusion.n_types, mode)
    flat = first.reshape(-1)
    X = np.empty((len(types), fusion.dim))
    X[:, 1:4] = 0.0
    scale = fusion.n_types - 1 if fusion.n_types > 1 else 1
    for k, t in enumerate(types):
        X[k, 0] = t / scale
        last = last_actions[k]
        X[k, 1 + (0 if last is None else int(last))] = 1.0
    X[:, 4:7] = wfst_preds
    X[:, 7:] = flat
    refined = fusion.predict(X)
    return refined, summarize_by_type(refined, last_actions, types, fusion.n_types, mode)
