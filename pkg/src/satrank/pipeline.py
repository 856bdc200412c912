"""Model-kind dispatch: training from a RunConfig and scoring from checkpoints."""

from __future__ import annotations

import logging
from typing import Callable, Sequence

import numpy as np

from satrank import baselines as bl
from satrank import gnnrank as gr
from satrank import numerics as nx
from satrank.calibrate import IsotonicMap, apply_isotonic
from satrank.checkpoint import Checkpoint
from satrank.config import RunConfig, to_dict
from satrank.encoder import CnnEncoderParams, encode_each
from satrank.errors import ConfigError, DataError
from satrank.textprep import TfidfPca, TokenizedDocument, Vocabulary, load_embeddings

logger = logging.getLogger(__name__)


def _tensors(params: Sequence[nx.Parameter]) -> dict[str, np.ndarray]:
    return {p.name: p.value for p in params}


def _load_params(params: Sequence[nx.Parameter], tensors: dict[str, np.ndarray]) -> None:
    for p in params:
        if p.name not in tensors:
            raise DataError(f"checkpoint lacks tensor {p.name!r}")
        if tensors[p.name].shape != p.shape:
            raise DataError(f"tensor {p.name!r} has shape {tensors[p.name].shape}, expected {p.shape}")
        p.value = tensors[p.name].copy()


def gnn_train_config(cfg: RunConfig) -> gr.TrainConfig:
    g = cfg.gnn
    return gr.TrainConfig(group_size=g.group_size, groups_per_batch=g.groups_per_batch, alpha=g.alpha,
                          beta1=g.beta1, beta2=g.beta2, l2=g.l2, dropout=g.dropout, epochs=g.epochs,
                          steps_per_epoch=g.steps_per_epoch or None, patience=g.patience,
                          anchors=g.anchors, anchor_pool=g.anchor_pool, seed=cfg.seed)


def embedding_matrix(cfg: RunConfig, vocab: Vocabulary) -> np.ndarray:
    if not cfg.paths.embeddings:
        raise ConfigError(f"model {cfg.model} needs paths.embeddings")
    try:
        table = load_embeddings(cfg.paths.embeddings, vocab)
    except FileNotFoundError:
        raise DataError(f"embedding file not found: {cfg.paths.embeddings}") from None
    logger.info("embeddings: dim %d, coverage %.3f", table.dim, table.coverage)
    return table.matrix


def _labelled(docs, what):
    out = [d for d in docs if d.label is not None]
    if len(out) < len(docs):
        logger.warning("%d unlabelled %s documents ignored", len(docs) - len(out), what)
    return out


def train_model(cfg: RunConfig, vocab: Vocabulary, train_docs, val_docs,
                on_epoch: Callable[[dict], None] | None = None) -> Checkpoint:
    """Train ``cfg.model`` and package it as a checkpoint."""
    train_docs = _labelled(train_docs, "training")
    val_docs = _labelled(val_docs, "validation")
    if len(train_docs) < 2:
        raise DataError("need at least two labelled training documents")
    echo = to_dict(cfg)
    kind = cfg.model
    meta: dict = {"config": echo, "history": []}

    if kind in ("rs", "lasso"):
        n_terms = min(len(vocab), cfg.text.max_terms) if cfg.text.max_terms else len(vocab)
        dims = min(cfg.text.pca_dims, len(train_docs))
        feats = TfidfPca.fit([d.token_ids for d in train_docs], n_terms, dims, cfg.text.last_fraction, cfg.seed)
        Xtr = feats.transform([d.token_ids for d in train_docs])
        Xva = feats.transform([d.token_ids for d in val_docs]) if val_docs else Xtr[:0]
        ytr = np.array([d.label for d in train_docs])
        yva = np.array([d.label for d in val_docs])
        tensors = {"tfidf.idf": feats.idf, "tfidf.mean": feats.mean, "tfidf.components": feats.components}
        meta["tfidf"] = {"n_terms": feats.n_terms, "last_fraction": feats.last_fraction,
                         "rank_deficient": feats.rank_deficient, "converged": feats.converged}
        if kind == "rs":
            losses: list[float] = []
            model = bl.train_linear_ranker(Xtr, ytr, bl.RankerConfig(cfg.rs.pairs_per_step, cfg.rs.alpha,
                                                                     cfg.rs.epochs, seed=cfg.seed), losses)
            meta["history"] = [{"epoch": i + 1, "train_loss": v} for i, v in enumerate(losses)]
            for row in meta["history"]:
                if on_epoch:
                    on_epoch(row)
        else:
            std = bl.Standardizer.fit(Xtr)
            if len(val_docs) >= 2:
                model, lam = bl.lasso_grid_search(std.transform(Xtr), ytr, std.transform(Xva), yva,
                                                  cfg.lasso.grid, cfg.lasso.max_iters)
            else:
                lam = 0.1 * bl.lambda_max(std.transform(Xtr), ytr)
                model = bl.train_lasso(std.transform(Xtr), ytr, lam, cfg.lasso.max_iters)
            meta["lasso_lambda"] = lam
            tensors.update({"std.mean": std.mean, "std.scale": std.scale, "std.keep": std.keep.astype(float)})
        tensors.update({"linear.w": model.w, "linear.b": np.asarray(model.b)})
        return Checkpoint(kind, vocab.digest(), 0, tensors, meta)

    table = embedding_matrix(cfg, vocab)
    enc = CnnEncoderParams.init(table.shape[1], cfg.encoder.widths, cfg.encoder.maps, seed=cfg.seed)
    meta["encoder"] = {"widths": list(enc.widths), "maps": enc.maps}
    if kind == "cnn-gnn":
        gnn = gr.GnnParams.init(enc.out_dim, cfg.gnn.edge_dim or None, cfg.gnn.message_dim or None, seed=cfg.seed)
        res = gr.train(train_docs, val_docs, table, enc, gnn, gnn_train_config(cfg), on_epoch)
        tensors = {**_tensors(enc.parameters()), **_tensors(gnn.parameters()),
                   "anchors.x": res.anchors.x, "anchors.labels": res.anchors.labels}
        meta["anchors"] = {"ids": res.anchors.ids, "seed": res.anchors.seed,
                           "strategy": res.anchors.strategy, "fallback": res.anchors.fallback}
        meta["history"] = res.history
        meta["best_epoch"] = res.best_epoch
    elif kind == "cnn-mse":
        model = bl.CnnRegressor.init(enc, seed=cfg.seed)
        g = cfg.gnn
        rcfg = bl.RegressorConfig(batch_size=cfg.cnn_mse.batch_size, alpha=g.alpha, beta1=g.beta1, beta2=g.beta2,
                                  l2=g.l2, dropout=g.dropout, epochs=g.epochs,
                                  steps_per_epoch=g.steps_per_epoch or None, patience=g.patience, seed=cfg.seed)
        bl.train_cnn_regressor(train_docs, val_docs, table, model, rcfg)
        tensors = {**_tensors(model.parameters())}
        meta["history"] = model.history
        if on_epoch:
            for row in model.history:
                on_epoch(row)
    else:
        raise ConfigError(f"unknown model kind {kind!r}")
    tensors["embedding.table"] = table
    return Checkpoint(kind, vocab.digest(), int(table.shape[1]), tensors, meta)


class Scorer:
    """Raw rank scores from a checkpoint; each score depends only on its document."""

    def __init__(self, ckpt: Checkpoint):
        self.ckpt = ckpt
        self.kind = ckpt.kind
        t = ckpt.tensors
        iso = ckpt.meta.get("isotonic")
        self.isotonic = IsotonicMap.from_json(iso) if iso else None
        if self.kind in ("rs", "lasso"):
            info = ckpt.meta["tfidf"]
            self.features = TfidfPca(info["n_terms"], info["last_fraction"], t["tfidf.idf"], t["tfidf.mean"],
                                     t["tfidf.components"])
            self.linear = bl.LinearModelParams(t["linear.w"], float(t["linear.b"]))
            if self.kind == "lasso":
                self.std = bl.Standardizer(t["std.mean"], t["std.scale"], t["std.keep"] > 0.5)
        elif self.kind in ("cnn-gnn", "cnn-mse"):
            self.table = t["embedding.table"]
            e = ckpt.meta["encoder"]
            self.encoder = CnnEncoderParams.init(ckpt.embedding_dim, e["widths"], e["maps"])
            _load_params(self.encoder.parameters(), t)
            if self.kind == "cnn-gnn":
                n = self.encoder.out_dim
                self.gnn = gr.GnnParams.init(n, t["gnn.W_e"].shape[1], t["gnn.W_m"].shape[1])
                _load_params(self.gnn.parameters(), t)
                a = ckpt.meta["anchors"]
                self.anchors = gr.AnchorSet(t["anchors.x"], t["anchors.labels"], a["ids"], a["seed"],
                                            a["strategy"], a["fallback"])
            else:
                self.head = bl.CnnRegressor(self.encoder, nx.Parameter(t["head.w"], "head.w"),
                                            nx.Parameter(t["head.b"], "head.b"))
        else:
            raise DataError(f"unknown model kind in checkpoint: {self.kind!r}")

    def raw(self, docs: Sequence[TokenizedDocument]) -> np.ndarray:
        ids = [d.token_ids for d in docs]
        if not ids:
            return np.zeros(0)
        if self.kind in ("rs", "lasso"):
            X = self.features.transform(ids)
            if self.kind == "lasso":
                X = self.std.transform(X)
            return self.linear.score(X)
        X = encode_each(ids, self.table, self.encoder)
        if self.kind == "cnn-gnn":
            return gr.score_many_with_anchors(X, self.anchors, self.gnn)
        return X @ self.head.w.value + float(self.head.b.value)

    def calibrated(self, raw) -> np.ndarray | None:
        return None if self.isotonic is None else np.atleast_1d(apply_isotonic(self.isotonic, raw))


def history_rows(ckpt: Checkpoint) -> list[dict]:
    return list(ckpt.meta.get("history", []))
