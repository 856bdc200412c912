"""Group-wise ranking network.

A group of ``g`` encoded documents forms a complete graph. Edge features are
a learned function of the absolute difference between node encodings, each
node sums messages from its neighbours, and a GRU-style gate mixes the
message into the node's own encoding before a linear head emits one rank
score per node. All weights are shared across nodes and edges, so the same
parameters score groups of any size.

Tensors carry arbitrary leading batch dimensions: ``X`` is ``[..., g, n]``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from satrank import numerics as nx
from satrank.encoder import CnnEncoderParams, encode_batch, encode_each
from satrank.errors import DataError, NumericError, ShapeError
from satrank.evaluation import spearman

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


@dataclass
class GnnParams:
    W_e: nx.Parameter
    b_e: nx.Parameter
    W_m: nx.Parameter
    b_m: nx.Parameter
    Wz: nx.Parameter
    Uz: nx.Parameter
    Wr: nx.Parameter
    Ur: nx.Parameter
    W: nx.Parameter
    U: nx.Parameter
    w_r: nx.Parameter
    c_r: nx.Parameter

    @classmethod
    def init(cls, n: int, n_e: int | None = None, n_m: int | None = None, seed: int = 0) -> "GnnParams":
        n_e = n if n_e is None else n_e
        n_m = n if n_m is None else n_m

        def xav(name, fan_in, fan_out):
            return nx.Parameter(nx.xavier_init(fan_in, fan_out, nx.derive_seed(seed, f"gnn.{name}")), f"gnn.{name}")

        head = nx.xavier_init(n, 1, nx.derive_seed(seed, "gnn.w_r"))[:, 0] * 1e-2
        return cls(
            W_e=xav("W_e", n, n_e), b_e=nx.Parameter(np.zeros(n_e), "gnn.b_e", decay=False),
            W_m=xav("W_m", n + n_e, n_m), b_m=nx.Parameter(np.zeros(n_m), "gnn.b_m", decay=False),
            Wz=xav("Wz", n_m, n), Uz=xav("Uz", n, n),
            Wr=xav("Wr", n_m, n), Ur=xav("Ur", n, n),
            W=xav("W", n_m, n), U=xav("U", n, n),
            w_r=nx.Parameter(head, "gnn.w_r"), c_r=nx.Parameter(np.zeros(()), "gnn.c_r", decay=False),
        )

    @property
    def n(self) -> int:
        return self.W_e.shape[0]

    def parameters(self) -> list[nx.Parameter]:
        return [getattr(self, f) for f in self.__dataclass_fields__]


# ---------------------------------------------------------------------------
# Forward pieces
# ---------------------------------------------------------------------------


def edge_features(x_i, x_j, params: GnnParams) -> nx.Tensor:
    """``ReLU(|x_i - x_j| W_e + b_e)``; symmetric in its arguments bit for bit."""
    x_i, x_j = nx.as_tensor(x_i), nx.as_tensor(x_j)
    if x_i.shape[-1] != params.n or x_j.shape[-1] != params.n:
        raise ShapeError(f"edge_features: inputs {x_i.shape}, {x_j.shape} but n={params.n}")
    return nx.relu(nx.add(nx.matmul(nx.absdiff(x_i, x_j), params.W_e), params.b_e))


def node_messages(X, params: GnnParams) -> nx.Tensor:
    """Messages ``m_i = sum_{j != i} ReLU([x_j, e_ij] W_m + b_m)`` for all nodes."""
    X = nx.as_tensor(X)
    *lead, g, n = X.shape
    lead = tuple(lead)
    rows = nx.reshape(X, lead + (g, 1, n))   # x_i along axis -3
    cols = nx.reshape(X, lead + (1, g, n))   # x_j along axis -2
    E = edge_features(rows, cols, params)    # [..., g, g, n_e]
    Xj = nx.broadcast_to(cols, lead + (g, g, n))
    M = nx.relu(nx.add(nx.matmul(nx.concat([Xj, E], axis=-1), params.W_m), params.b_m))
    off_diag = (1.0 - np.eye(g))[:, :, None]
    return nx.tsum(nx.mul(M, off_diag), axis=-2)


def node_message(i: int, X, params: GnnParams) -> nx.Tensor:
    """Message received by node ``i`` of a single ``[g, n]`` group."""
    X = nx.as_tensor(X)
    if X.ndim != 2:
        raise ShapeError(f"node_message expects a [g, n] group, got {X.shape}")
    m = node_messages(X, params)
    pick = np.zeros(X.shape[0])
    pick[i] = 1.0
    return nx.tsum(nx.mul(m, pick[:, None]), axis=0)


def gru_readout(x0, m, params: GnnParams, mode: str = "eval", seed: int = 0,
                dropout: float = 0.5) -> nx.Tensor:
    """Gate the message into the node encoding and project to a scalar score."""
    x0, m = nx.as_tensor(x0), nx.as_tensor(m)
    z = nx.sigmoid(nx.add(nx.matmul(m, params.Wz), nx.matmul(x0, params.Uz)))
    r = nx.sigmoid(nx.add(nx.matmul(m, params.Wr), nx.matmul(x0, params.Ur)))
    cand = nx.tanh(nx.add(nx.matmul(m, params.W), nx.matmul(nx.mul(r, x0), params.U)))
    h = nx.add(nx.mul(nx.sub(1.0, z), x0), nx.mul(z, cand))
    h = nx.dropout(h, dropout, seed, mode)
    return nx.add(nx.matmul(h, params.w_r), params.c_r)


def group_scores(X, params: GnnParams, mode: str = "eval", seed: int = 0,
                 dropout: float = 0.5) -> nx.Tensor:
    """One round of message passing over the complete graph, then readout."""
    X = nx.as_tensor(X)
    if X.ndim < 2 or X.shape[-1] != params.n:
        raise ShapeError(f"group_scores: expected [..., g, {params.n}], got {X.shape}")
    return gru_readout(X, node_messages(X, params), params, mode, seed, dropout)


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------


def pair_labels(labels) -> np.ndarray:
    """``[..., g, g]`` targets: 1 where S_i > S_j, 0 where S_i < S_j, 0.5 on ties."""
    s = np.asarray(labels, dtype=float)
    a, b = s[..., :, None], s[..., None, :]
    return np.where(a > b, 1.0, np.where(a < b, 0.0, 0.5))


def rall_loss(scores, labels) -> nx.Tensor:
    """Mean pairwise cross-entropy over ordered pairs ``i != j`` of every group.

    ``P_ij = sigmoid(o_i - o_j)`` clamped to ``[1e-12, 1 - 1e-12]``.
    """
    scores = nx.as_tensor(scores)
    labels = np.asarray(labels, dtype=float)
    if labels.shape != scores.shape:
        raise ShapeError(f"rall_loss: scores {scores.shape} vs labels {labels.shape}")
    g = scores.shape[-1]
    if g < 2:
        raise ShapeError("rall_loss needs at least two nodes per group")
    lead = scores.shape[:-1]
    L = pair_labels(labels)
    d = nx.sub(nx.reshape(scores, lead + (g, 1)), nx.reshape(scores, lead + (1, g)))
    P = nx.clip(nx.sigmoid(d), PROB_FLOOR, 1.0 - PROB_FLOOR)
    Q = nx.clip(nx.sub(1.0, P), PROB_FLOOR, 1.0 - PROB_FLOOR)
    per = nx.add(nx.mul(L, nx.log(P)), nx.mul(1.0 - L, nx.log(Q)))
    off = 1.0 - np.eye(g)
    n_pairs = off.sum() * int(np.prod(lead, dtype=int))
    return nx.mul(nx.tsum(nx.mul(per, off)), -1.0 / n_pairs)


# ---------------------------------------------------------------------------
# Sampling and anchors
# ---------------------------------------------------------------------------


def sample_groups(n_items: int, group_size: int, n_groups: int, seed: int, step: int = 0) -> np.ndarray:
    """``[n_groups, group_size]`` item indices, distinct within each group."""
    if n_items < group_size:
        raise DataError(f"need at least {group_size} items to form a group, have {n_items}")
    rng = nx.rng_for(seed, "groups", step)
    return np.stack([rng.choice(n_items, size=group_size, replace=False) for _ in range(n_groups)])


@dataclass
class AnchorSet:
    x: np.ndarray            # [k, n] encodings
    labels: np.ndarray       # [k]
    ids: list[str]
    seed: int
    strategy: str = "label-stratified"
    fallback: bool = False

    def __post_init__(self):
        if len(self.x) < 1:
            raise ValueError("an anchor set needs at least one anchor")

    @property
    def k(self) -> int:
        return len(self.x)


def label_strata(labels: np.ndarray, k: int) -> list[np.ndarray] | None:
    """Split items into ``k`` label-contiguous strata of roughly equal size.

    Items sharing a label always land in the same stratum. Returns ``None``
    when there are fewer distinct labels than ``k``.
    """
    labels = np.asarray(labels, dtype=float)
    values, counts = np.unique(labels, return_counts=True)
    if len(values) < k:
        return None
    total = counts.sum()
    cum = np.cumsum(counts)
    cuts = []
    start = 0
    for j in range(k - 1):
        target = (j + 1) * total / k
        lo = start                      # at least one value per stratum
        hi = len(values) - (k - 1 - j) - 1
        best = min(range(lo, hi + 1), key=lambda c: (abs(cum[c] - target), c))
        cuts.append(best)
        start = best + 1
    bounds = [-1] + cuts + [len(values) - 1]
    strata = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        members = np.flatnonzero((labels >= values[a + 1]) & (labels <= values[b]))
        strata.append(members)
    return strata


def _medoid(points: np.ndarray) -> int:
    sq = np.sum(points * points, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * points @ points.T, 0.0)
    return int(np.argmin(np.sqrt(d2).mean(axis=1)))


def select_anchors(encodings: np.ndarray, labels, ids: Sequence[str], k: int, seed: int = 0,
                   max_stratum: int = 2000) -> AnchorSet:
    """Pick one medoid per label stratum from training items.

    Strata larger than ``max_stratum`` are subsampled (seeded) before the
    medoid search. With fewer distinct labels than ``k`` the anchors are a
    seeded uniform draw instead, and ``fallback`` is set.
    """
    encodings = np.asarray(encodings, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if not 1 <= k <= len(encodings):
        raise ValueError(f"anchor count {k} must be in [1, {len(encodings)}]")
    rng = nx.rng_for(seed, "anchors")
    strata = label_strata(labels, k)
    if strata is None:
        logger.warning("only %d distinct labels for %d anchors; sampling uniformly",
                       len(np.unique(labels)), k)
        pick = np.sort(rng.choice(len(encodings), size=k, replace=False))
        fallback = True
    else:
        pick = []
        for members in strata:
            if len(members) > max_stratum:
                members = np.sort(rng.choice(members, size=max_stratum, replace=False))
            pick.append(members[_medoid(encodings[members])])
        pick = np.asarray(pick)
        fallback = False
    return AnchorSet(encodings[pick].copy(), labels[pick].copy(), [ids[i] for i in pick], seed,
                     "uniform" if fallback else "label-stratified", fallback)


def score_with_anchors(x, anchors: AnchorSet, params: GnnParams) -> float:
    """Score one encoded item inside a graph made of itself plus the anchors."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    X = np.vstack([x, anchors.x])
    return float(group_scores(X, params, mode="eval").value[0])


def score_many_with_anchors(X: np.ndarray, anchors: AnchorSet, params: GnnParams) -> np.ndarray:
    """Independent anchored scores, one graph per row of ``X``."""
    return np.array([score_with_anchors(x, anchors, params) for x in np.asarray(X)])


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    group_size: int = 5
    groups_per_batch: int = 64
    alpha: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    l2: float = 0.5
    dropout: float = 0.5
    epochs: int = 50
    steps_per_epoch: int | None = None
    patience: int = 10
    anchors: int = 16
    anchor_pool: int = 1000
    val_groups: int = 64
    seed: int = 0


@dataclass
class TrainResult:
    encoder: CnnEncoderParams
    gnn: GnnParams
    anchors: AnchorSet
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_spearman: float = float("-inf")


def _snapshot(params: Sequence[nx.Parameter]) -> dict[str, np.ndarray]:
    return {p.name: p.value.copy() for p in params}


def _restore(params: Sequence[nx.Parameter], snap: dict[str, np.ndarray]) -> None:
    for p in params:
        p.value = snap[p.name].copy()
        p.zero_grad()


def _labels(docs) -> np.ndarray:
    if any(d.label is None for d in docs):
        raise DataError("training and validation documents must all carry labels")
    return np.array([d.label for d in docs], dtype=float)


def fit_anchors(train_docs, table, enc: CnnEncoderParams, config: TrainConfig) -> AnchorSet:
    """Anchors chosen from a fixed, seeded pool of training items."""
    pool_rng = nx.rng_for(config.seed, "anchor-pool")
    n = len(train_docs)
    pool = np.arange(n) if n <= config.anchor_pool else np.sort(
        pool_rng.choice(n, size=config.anchor_pool, replace=False))
    enc_pool = encode_each([train_docs[i].token_ids for i in pool], table, enc)
    labels = np.array([train_docs[i].label for i in pool], dtype=float)
    return select_anchors(enc_pool, labels, [train_docs[i].id for i in pool],
                          min(config.anchors, len(pool)), seed=config.seed)


def validate(val_docs, anchors: AnchorSet, table, enc: CnnEncoderParams, gnn: GnnParams,
             config: TrainConfig) -> tuple[float | None, float | None]:
    """Validation loss on fixed groups and Spearman of anchored scores."""
    X = encode_each([d.token_ids for d in val_docs], table, enc)
    y = _labels(val_docs)
    loss = None
    if len(val_docs) >= config.group_size:
        idx = sample_groups(len(val_docs), config.group_size, config.val_groups, config.seed, 0)
        loss = rall_loss(group_scores(X[idx], gnn, "eval"), y[idx]).item()
    scores = score_many_with_anchors(X, anchors, gnn)
    try:
        rho = spearman(scores, y)
    except ValueError:
        rho = None
    return loss, rho


def train(train_docs, val_docs, table: np.ndarray, enc: CnnEncoderParams, gnn: GnnParams,
          config: TrainConfig, on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Jointly train encoder and GNN; return the best-validation checkpoint.

    Each step samples ``groups_per_batch`` groups of ``group_size`` items,
    minimizes mean pairwise loss plus the L2 penalty, and applies Adam.
    """
    y = _labels(train_docs)
    _labels(val_docs)
    cfg = config
    params = enc.parameters() + gnn.parameters()
    state = nx.AdamState.for_params(params, alpha=cfg.alpha, beta1=cfg.beta1, beta2=cfg.beta2,
                                    epsilon=cfg.epsilon)
    per_step = cfg.group_size * cfg.groups_per_batch
    steps = cfg.steps_per_epoch or max(1, math.ceil(len(train_docs) / per_step))
    n = enc.out_dim
    result = TrainResult(enc, gnn, anchors=None)  # type: ignore[arg-type]
    best_snap, stale, step = None, 0, 0

    for epoch in range(1, cfg.epochs + 1):
        losses = []
        for _ in range(steps):
            idx = sample_groups(len(train_docs), cfg.group_size, cfg.groups_per_batch, cfg.seed, step)

            def objective():
                X = encode_batch([train_docs[i].token_ids for i in idx.reshape(-1)], table, enc, "train",
                                 nx.derive_seed(cfg.seed, "encoder-dropout", step), cfg.dropout)
                X = nx.reshape(X, (cfg.groups_per_batch, cfg.group_size, n))
                s = group_scores(X, gnn, "train", nx.derive_seed(cfg.seed, "gru-dropout", step), cfg.dropout)
                return nx.add(rall_loss(s, y[idx]), nx.l2_penalty(params, cfg.l2))

            try:
                losses.append(nx.forward_backward(objective, params))
            except NumericError as exc:
                bad = [[train_docs[i].id for i in grp] for grp in idx]
                raise NumericError(f"step {step}: {exc}; groups: {json.dumps(bad)}") from exc
            nx.adam_step(params, state)
            step += 1

        anchors = fit_anchors(train_docs, table, enc, cfg)
        val_loss, rho = validate(val_docs, anchors, table, enc, gnn, cfg)
        row = {"epoch": epoch, "step": step, "train_loss": float(np.mean(losses)),
               "val_loss": val_loss, "val_spearman": rho, "anchor_fallback": anchors.fallback}
        result.history.append(row)
        if on_epoch is not None:
            on_epoch(row)
        logger.info("epoch %d train %.5f val %s rho %s", epoch, row["train_loss"], val_loss, rho)
        if rho is not None and rho > result.best_spearman:
            result.best_spearman, result.best_epoch = rho, epoch
            best_snap, result.anchors, stale = _snapshot(params), anchors, 0
        else:
            stale += 1
            if result.anchors is None:
                result.anchors = anchors
            if stale >= cfg.patience:
                break

    if best_snap is not None:
        _restore(params, best_snap)
    return result


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
