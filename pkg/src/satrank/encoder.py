"""Convolutional sentence encoder over static word vectors.

Each filter width slides over the stacked embeddings, applies ReLU and
max-over-time pooling; the pooled maps of all widths are concatenated.
The embedding table is a constant: gradients stop at the filters.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from satrank import numerics as nx
from satrank.errors import ShapeError
from satrank.textprep import PAD_ID


@dataclass
class CnnEncoderParams:
    dim: int
    widths: tuple[int, ...] = (3, 4, 5)
    maps: int = 100
    filters: list[nx.Parameter] = field(default_factory=list)
    biases: list[nx.Parameter] = field(default_factory=list)

    @classmethod
    def init(cls, dim: int, widths: Sequence[int] = (3, 4, 5), maps: int = 100, seed: int = 0):
        widths = tuple(int(w) for w in widths)
        filters = [nx.Parameter(nx.xavier_init(w * dim, maps, nx.derive_seed(seed, "encoder.filter", w)),
                                f"encoder.filter{w}") for w in widths]
        biases = [nx.Parameter(np.zeros(maps), f"encoder.bias{w}", decay=False) for w in widths]
        return cls(dim, widths, maps, filters, biases)

    @property
    def out_dim(self) -> int:
        return len(self.widths) * self.maps

    def parameters(self) -> list[nx.Parameter]:
        return [*self.filters, *self.biases]


def pad_ids(token_ids: Sequence[int], min_len: int) -> list[int]:
    """Left-pad with PAD so at least one window of ``min_len`` exists."""
    ids = list(token_ids)
    if len(ids) < min_len:
        ids = [PAD_ID] * (min_len - len(ids)) + ids
    return ids


def _batch_windows(docs: Sequence[Sequence[int]], table: np.ndarray, widths):
    max_w = max(widths)
    padded = [pad_ids(d, max_w) for d in docs]
    lengths = np.array([len(d) for d in padded])
    T = int(lengths.max())
    ids = np.full((len(docs), T), PAD_ID, dtype=np.int64)
    for r, d in enumerate(padded):
        ids[r, : len(d)] = d
    emb = table[ids]  # [B, T, d]
    out = []
    for w in widths:
        win = sliding_window_view(emb, w, axis=1)  # [B, T-w+1, d, w]
        win = np.ascontiguousarray(win.transpose(0, 1, 3, 2)).reshape(len(docs), T - w + 1, w * emb.shape[2])
        mask = np.arange(T - w + 1)[None, :] <= (lengths - w)[:, None]
        out.append((win, mask))
    return out


def encode_batch(docs: Sequence[Sequence[int]], table: np.ndarray, params: CnnEncoderParams,
                 mode: str = "eval", seed: int = 0, dropout: float = 0.5) -> nx.Tensor:
    """Encode token-id lists into a ``[B, n]`` tensor.

    Right padding added for batching is masked out of the max pool, so each
    row equals the single-document encoding up to floating-point summation
    order. Use :func:`encode` when bit-exact per-document results matter.
    """
    if not len(docs):
        raise ShapeError("encode_batch: empty batch")
    if table.shape[1] != params.dim:
        raise ShapeError(f"encode: table dim {table.shape[1]} != encoder dim {params.dim}")
    pooled = []
    for (win, mask), f, b in zip(_batch_windows(docs, table, params.widths), params.filters, params.biases):
        conv = nx.relu(nx.add(nx.matmul(win, f), b))
        pooled.append(nx.masked_max(conv, mask, axis=1))
    h = nx.concat(pooled, axis=-1)
    return nx.dropout(h, dropout, seed, mode)


def encode(token_ids: Sequence[int], table: np.ndarray, params: CnnEncoderParams,
           mode: str = "eval", seed: int = 0, dropout: float = 0.5) -> nx.Tensor:
    """Encode one document to a length-``n`` tensor."""
    return nx.reshape(encode_batch([token_ids], table, params, mode, seed, dropout), (params.out_dim,))


def encode_each(docs: Sequence[Sequence[int]], table: np.ndarray, params: CnnEncoderParams) -> np.ndarray:
    """Eval-mode encodings computed one document at a time, as a plain array.

    Every row depends only on its own document, which the anchored scorer
    relies on.
    """
    out = np.empty((len(docs), params.out_dim))
    for i, d in enumerate(docs):
        out[i] = encode(d, table, params, mode="eval").value
    return out
