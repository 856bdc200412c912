"""Comparison models: linear pairwise ranker, Lasso, and a CNN regressor."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from satrank import numerics as nx
from satrank.encoder import CnnEncoderParams, encode_batch, encode_each
from satrank.errors import DataError, NumericError
from satrank.evaluation import spearman
from satrank.gnnrank import pair_labels

logger = logging.getLogger(__name__)


@dataclass
class LinearModelParams:
    w: np.ndarray
    b: float = 0.0

    def score(self, features) -> np.ndarray:
        return np.asarray(features, dtype=float) @ self.w + self.b


# ---------------------------------------------------------------------------
# Pairwise linear ranker (RS)
# ---------------------------------------------------------------------------


@dataclass
class RankerConfig:
    pairs_per_step: int = 320
    alpha: float = 1e-2
    epochs: int = 20
    steps_per_epoch: int | None = None
    seed: int = 0


def pairwise_logistic_loss(scores_i, scores_j, targets) -> nx.Tensor:
    """Mean of ``-L log s(o_i-o_j) - (1-L) log s(o_j-o_i)`` with clamping."""
    p = nx.clip(nx.sigmoid(nx.sub(scores_i, scores_j)), 1e-12, 1 - 1e-12)
    q = nx.clip(nx.sub(1.0, p), 1e-12, 1 - 1e-12)
    t = np.asarray(targets, dtype=float)
    per = nx.add(nx.mul(t, nx.log(p)), nx.mul(1.0 - t, nx.log(q)))
    return nx.mul(nx.mean(per), -1.0)


def sample_pairs(n: int, count: int, seed: int, step: int) -> tuple[np.ndarray, np.ndarray]:
    rng = nx.rng_for(seed, "pairs", step)
    i = rng.integers(0, n, size=count)
    j = (i + rng.integers(1, n, size=count)) % n  # j != i
    return i, j


def train_linear_ranker(features, labels, config: RankerConfig | None = None,
                        history: list | None = None) -> LinearModelParams:
    """Fit ``w, b`` by Adam on sampled pairs under the tie-aware pairwise loss."""
    cfg = config or RankerConfig()
    X = np.asarray(features, dtype=float)
    y = np.asarray(labels, dtype=float)
    if len(X) < 2:
        raise DataError("linear ranker needs at least two items")
    w = nx.Parameter(np.zeros(X.shape[1]), "rs.w")
    b = nx.Parameter(np.zeros(()), "rs.b", decay=False)
    if np.all(y == y[0]):
        logger.warning("all labels equal; the ranker has nothing to learn")
        return LinearModelParams(w.value.copy(), 0.0)
    state = nx.AdamState.for_params([w, b], alpha=cfg.alpha)
    steps = cfg.steps_per_epoch or max(1, math.ceil(len(X) / cfg.pairs_per_step))
    step = 0
    for _ in range(cfg.epochs):
        losses = []
        for _ in range(steps):
            i, j = sample_pairs(len(X), cfg.pairs_per_step, cfg.seed, step)
            t = pair_labels(np.stack([y[i], y[j]], axis=1))[:, 0, 1]

            def objective():
                return pairwise_logistic_loss(nx.add(nx.matmul(X[i], w), b), nx.add(nx.matmul(X[j], w), b), t)

            losses.append(nx.forward_backward(objective, [w, b]))
            nx.adam_step([w, b], state)
            step += 1
        if history is not None:
            history.append(float(np.mean(losses)))
    return LinearModelParams(w.value.copy(), float(b.value))


# ---------------------------------------------------------------------------
# Lasso
# ---------------------------------------------------------------------------


@dataclass
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray
    keep: np.ndarray  # boolean mask of non-constant columns

    @classmethod
    def fit(cls, X) -> "Standardizer":
        X = np.asarray(X, dtype=float)
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        keep = scale > 1e-12
        return cls(mean, np.where(keep, scale, 1.0), keep)

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return ((X - self.mean) / self.scale)[:, self.keep]


def check_standardized(X, tol: float = 1e-6) -> None:
    X = np.asarray(X, dtype=float)
    if not (np.all(np.abs(X.mean(axis=0)) <= tol) and np.all(np.abs(X.std(axis=0) - 1.0) <= tol)):
        raise DataError("lasso features must be standardized (zero mean, unit variance per column)")


def lasso_objective(X, y, w, b, lam) -> float:
    r = y - X @ w - b
    return 0.5 * float(r @ r) / len(y) + lam * float(np.abs(w).sum())


def soft_threshold(z: float, lam: float) -> float:
    return math.copysign(max(abs(z) - lam, 0.0), z)


def train_lasso(features, labels, lam: float, max_iters: int = 1000, tol: float = 1e-8,
                trace: list | None = None) -> LinearModelParams:
    """Cyclic coordinate descent on ``(1/2N)||y - Xw - b||^2 + lam ||w||_1``.

    With standardized columns every coordinate update is a single
    soft-threshold; the unpenalized intercept is the mean of ``y``.
    """
    X = np.asarray(features, dtype=float)
    y = np.asarray(labels, dtype=float)
    check_standardized(X)
    n, d = X.shape
    b = float(y.mean())
    w = np.zeros(d)
    r = y - b
    col_sq = (X * X).sum(axis=0) / n
    for _ in range(max_iters):
        biggest = 0.0
        for j in range(d):
            old = w[j]
            rho = X[:, j] @ r / n + col_sq[j] * old
            new = soft_threshold(rho, lam) / col_sq[j]
            if new != old:
                r -= X[:, j] * (new - old)
                w[j] = new
                biggest = max(biggest, abs(new - old))
        if trace is not None:
            trace.append(lasso_objective(X, y, w, b, lam))
        if biggest < tol:
            break
    return LinearModelParams(w, b)


def lambda_max(X, y) -> float:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    return float(np.max(np.abs(X.T @ (y - y.mean()))) / len(y))


def lasso_grid_search(X_train, y_train, X_val, y_val, n_grid: int = 5, max_iters: int = 1000):
    """Pick lambda from a log grid below ``lambda_max`` by validation Spearman."""
    top = lambda_max(X_train, y_train)
    grid = top * np.logspace(-3, -0.5, n_grid)
    best = None
    for lam in grid:
        model = train_lasso(X_train, y_train, float(lam), max_iters=max_iters, tol=1e-6)
        try:
            rho = spearman(model.score(X_val), y_val)
        except ValueError:
            rho = -np.inf
        if best is None or rho > best[0]:
            best = (rho, float(lam), model)
    return best[2], best[1]


# ---------------------------------------------------------------------------
# CNN regressor
# ---------------------------------------------------------------------------


@dataclass
class RegressorConfig:
    batch_size: int = 64
    alpha: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    l2: float = 0.5
    dropout: float = 0.5
    epochs: int = 50
    steps_per_epoch: int | None = None
    patience: int = 10
    seed: int = 0


@dataclass
class CnnRegressor:
    encoder: CnnEncoderParams
    w: nx.Parameter
    b: nx.Parameter
    history: list[dict] = field(default_factory=list)

    @classmethod
    def init(cls, encoder: CnnEncoderParams, seed: int = 0) -> "CnnRegressor":
        n = encoder.out_dim
        w = nx.xavier_init(n, 1, nx.derive_seed(seed, "cnn.head"))[:, 0]
        return cls(encoder, nx.Parameter(w, "head.w"), nx.Parameter(np.zeros(()), "head.b", decay=False))

    def parameters(self) -> list[nx.Parameter]:
        return self.encoder.parameters() + [self.w, self.b]

    def predict(self, docs, table) -> np.ndarray:
        X = encode_each(docs, table, self.encoder)
        return X @ self.w.value + float(self.b.value)


def train_cnn_regressor(train_docs, val_docs, table, model: CnnRegressor,
                        config: RegressorConfig | None = None, train_encoder: bool = True) -> CnnRegressor:
    """Minimize MSE of an affine head on pooled CNN features with Adam."""
    cfg = config or RegressorConfig()
    if any(d.label is None for d in train_docs):
        raise DataError("training documents must carry labels")
    y = np.array([d.label for d in train_docs], dtype=float)
    params = model.parameters() if train_encoder else [model.w, model.b]
    state = nx.AdamState.for_params(params, alpha=cfg.alpha, beta1=cfg.beta1, beta2=cfg.beta2)
    steps = cfg.steps_per_epoch or max(1, math.ceil(len(train_docs) / cfg.batch_size))
    best, best_rho, stale, step = None, -np.inf, 0, 0
    for epoch in range(1, cfg.epochs + 1):
        losses = []
        for _ in range(steps):
            rng = nx.rng_for(cfg.seed, "cnn-batch", step)
            idx = rng.choice(len(train_docs), size=min(cfg.batch_size, len(train_docs)), replace=False)

            def objective():
                X = encode_batch([train_docs[i].token_ids for i in idx], table, model.encoder, "train",
                                 nx.derive_seed(cfg.seed, "encoder-dropout", step), cfg.dropout)
                pred = nx.add(nx.matmul(X, model.w), model.b)
                err = nx.sub(pred, y[idx])
                return nx.add(nx.mean(nx.mul(err, err)), nx.l2_penalty(params, cfg.l2))

            try:
                losses.append(nx.forward_backward(objective, params))
            except NumericError as exc:
                raise NumericError(f"step {step}: {exc}; batch ids: {[train_docs[i].id for i in idx]}") from exc
            nx.adam_step(params, state)
            step += 1
        row = {"epoch": epoch, "step": step, "train_loss": float(np.mean(losses))}
        if val_docs:
            yv = np.array([d.label for d in val_docs], dtype=float)
            pv = model.predict([d.token_ids for d in val_docs], table)
            row["val_loss"] = float(np.mean((pv - yv) ** 2))
            try:
                row["val_spearman"] = spearman(pv, yv)
            except ValueError:
                row["val_spearman"] = None
        model.history.append(row)
        rho = row.get("val_spearman")
        if rho is not None and rho > best_rho:
            best_rho, stale = rho, 0
            best = {p.name: p.value.copy() for p in model.parameters()}
        elif val_docs:
            stale += 1
            if stale >= cfg.patience:
                break
    if best is not None:
        for p in model.parameters():
            p.value = best[p.name]
    return model
