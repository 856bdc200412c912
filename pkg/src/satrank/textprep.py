"""Raw text to model inputs.

Scrubbing replaces personal and numeric entities with atomic placeholder
tokens, tokenization maps words onto a frequency-ordered vocabulary, and the
TF-IDF/PCA block builds the dense features used by the linear baselines.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from satrank.errors import DataError

logger = logging.getLogger(__name__)

PAD = "<pad>"
UNK = "<unk>"
ENTITY_TOKENS = ("⟨EMAIL⟩", "⟨PHONE⟩", "⟨MONEY⟩", "⟨DATE⟩", "⟨TIME⟩", "⟨NUM⟩")
RESERVED = (PAD, UNK) + ENTITY_TOKENS
PAD_ID, UNK_ID = 0, 1

# Rule table version 1. Order matters: earlier rules consume digits that
# later, more generic rules would otherwise split apart.
_MONTHS = (r"(?:jan(?:uary)?|feb(?:ruary)?|mar(?:ch)?|apr(?:il)?|may|june?|july?|"
           r"aug(?:ust)?|sep(?:t(?:ember)?)?|oct(?:ober)?|nov(?:ember)?|dec(?:ember)?)")
PII_RULES: tuple[tuple[str, re.Pattern], ...] = (
    ("⟨EMAIL⟩", re.compile(r"[\w.+-]+@[\w-]+(?:\.[\w-]+)+")),
    ("⟨PHONE⟩", re.compile(
        r"(?<!\w)(?:\+?1[\s.-]?)?(?:\(\d{3}\)\s?|\d{3}[\s.-])\d{3}[\s.-]\d{4}(?!\w)")),
    ("⟨MONEY⟩", re.compile(
        r"\$\s?\d[\d,]*(?:\.\d+)?|\b\d[\d,]*(?:\.\d+)?\s?(?:dollars?|bucks|usd)\b", re.I)),
    ("⟨DATE⟩", re.compile(
        r"\b\d{4}-\d{1,2}-\d{1,2}\b|\b\d{1,2}[/-]\d{1,2}[/-]\d{2,4}\b|"
        rf"\b{_MONTHS}\.?\s+\d{{1,2}}(?:st|nd|rd|th)?(?:,?\s+\d{{4}})?\b|"
        rf"\b\d{{1,2}}(?:st|nd|rd|th)?\s+(?:of\s+)?{_MONTHS}\b(?:,?\s+\d{{4}})?", re.I)),
    ("⟨TIME⟩", re.compile(
        r"\b\d{1,2}:\d{2}(?::\d{2})?(?:\s?[ap]\.?m\.?)?(?!\w)|\b\d{1,2}\s?[ap]\.?m\b\.?", re.I)),
    ("⟨NUM⟩", re.compile(r"\d+(?:[.,]\d+)*")),
)

_TOKEN_RE = re.compile("|".join(re.escape(t) for t in ENTITY_TOKENS) + r"|[^\W_]+(?:_[^\W_]+)*")


def scrub_pii(text: str) -> str:
    """Replace emails, phones, money, dates, times and digit runs with tokens.

    Rules apply in a fixed order and the whole table is re-run until nothing
    changes, which makes the function idempotent by construction.
    """
    for _ in range(8):
        before = text
        for token, pattern in PII_RULES:
            text = pattern.sub(token, text)
        if text == before:
            break
    return text


def split_tokens(text: str) -> list[str]:
    """Lowercased word tokens; entity placeholders are kept whole."""
    out = []
    for tok in _TOKEN_RE.findall(text):
        out.append(tok if tok in ENTITY_TOKENS else tok.lower())
    return out


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if tuple(self.tokens[: len(RESERVED)]) != RESERVED:
            raise DataError("vocabulary must start with the reserved tokens")
        if len(set(self.tokens)) != len(self.tokens):
            raise DataError("vocabulary contains duplicate tokens")
        object.__setattr__(self, "index", {t: i for i, t in enumerate(self.tokens)})

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def id(self, token: str) -> int:
        return self.index.get(token, UNK_ID)

    def digest(self) -> str:
        return hashlib.sha256("\n".join(self.tokens).encode()).hexdigest()[:16]

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(tuple(lines))


def build_vocab(corpus: Iterable[str | Sequence[str]], min_count: int = 1,
                max_size: int | None = None) -> Vocabulary:
    """Reserved tokens, then tokens with count >= ``min_count`` by (count desc, token).

    ``corpus`` items may be scrubbed strings or pre-split token lists.
    """
    counts: Counter = Counter()
    n = 0
    for doc in corpus:
        n += 1
        counts.update(split_tokens(doc) if isinstance(doc, str) else doc)
    if n == 0:
        raise DataError("cannot build a vocabulary from an empty corpus")
    kept = sorted((t for t, c in counts.items() if c >= min_count and t not in RESERVED),
                  key=lambda t: (-counts[t], t))
    if max_size is not None:
        kept = kept[: max(0, max_size - len(RESERVED))]
    return Vocabulary(RESERVED + tuple(kept))


@dataclass
class TokenizedDocument:
    id: str
    token_ids: list[int]
    label: float | None = None
    timestamp: str | None = None
    group_keys: dict[str, str] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"id": self.id, "token_ids": self.token_ids, "label": self.label,
                "timestamp": self.timestamp, "group_keys": self.group_keys}

    @classmethod
    def from_json(cls, obj: dict) -> "TokenizedDocument":
        return cls(obj["id"], list(obj["token_ids"]), obj.get("label"),
                   obj.get("timestamp"), dict(obj.get("group_keys") or {}))


def tokenize(text: str, vocab: Vocabulary, max_len: int | None = None, doc_id: str = "",
             label=None, timestamp=None, group_keys=None) -> TokenizedDocument:
    """Map scrubbed text to vocabulary ids (unknown words become UNK).

    Documents longer than ``max_len`` keep their last ``max_len`` tokens.
    """
    toks = split_tokens(text)
    if not toks:
        raise DataError(f"document {doc_id!r} has no tokens")
    if max_len is not None and len(toks) > max_len:
        toks = toks[-max_len:]
    return TokenizedDocument(doc_id, [vocab.id(t) for t in toks], label, timestamp,
                             dict(group_keys or {}))


def detokenize(token_ids: Sequence[int], vocab: Vocabulary) -> str:
    return " ".join(vocab.tokens[i] for i in token_ids)


# ---------------------------------------------------------------------------
# Corpus files
# ---------------------------------------------------------------------------


@dataclass
class RawDocument:
    id: str
    text: str
    label: float | None = None
    timestamp: str | None = None
    group_keys: dict[str, str] = field(default_factory=dict)


def read_corpus(path, scale: tuple[float, float] | None = None) -> list[RawDocument]:
    """Read line-JSON documents, validating ids and label range."""
    docs: list[RawDocument] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                doc = RawDocument(str(obj["id"]), str(obj["text"]), obj.get("label"),
                                  obj.get("timestamp"), dict(obj.get("group_keys") or {}))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: malformed corpus line ({exc})") from None
            if not doc.id:
                raise DataError(f"{path}:{lineno}: empty id")
            if doc.id in seen:
                raise DataError(f"{path}:{lineno}: duplicate id {doc.id!r}")
            seen.add(doc.id)
            if doc.label is not None:
                doc.label = float(doc.label)
                if scale is not None and not scale[0] <= doc.label <= scale[1]:
                    raise DataError(f"{path}:{lineno}: label {doc.label} outside scale {scale}")
            docs.append(doc)
    return docs


def write_jsonl(path, rows: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")


def read_tokenized(path) -> list[TokenizedDocument]:
    with open(path, encoding="utf-8") as fh:
        return [TokenizedDocument.from_json(json.loads(line)) for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# Embeddings
# ---------------------------------------------------------------------------


@dataclass
class EmbeddingTable:
    matrix: np.ndarray
    coverage: float
    matched: int

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


def load_embeddings(path, vocab: Vocabulary) -> EmbeddingTable:
    """Read a ``token v1 ... vd`` text file (optional ``count dim`` header).

    PAD gets zeros; UNK and tokens absent from the file get the mean of the
    matched rows. Lines for tokens outside the vocabulary are skipped without
    parsing their floats, so large files stream cheaply.
    """
    dim = None
    rows: dict[int, np.ndarray] = {}
    with open(path, encoding="utf-8", errors="replace") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").rstrip().split(" ")
            if not parts or parts == [""]:
                continue
            if lineno == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                dim = int(parts[1])
                continue
            width = len(parts) - 1
            if dim is None:
                dim = width
            elif width != dim:
                raise DataError(f"{path}:{lineno}: expected {dim} values, found {width}")
            idx = vocab.index.get(parts[0])
            if idx is None or idx == PAD_ID or idx in rows:
                continue
            try:
                rows[idx] = np.array(parts[1:], dtype=np.float64)
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric vector entry") from None
    if not rows or dim is None:
        raise DataError(f"{path}: no vocabulary token found in embedding file")
    matrix = np.zeros((len(vocab), dim))
    mean = np.mean(np.stack([rows[i] for i in sorted(rows)]), axis=0)
    matrix[1:] = mean
    for i, vec in rows.items():
        matrix[i] = vec
    matrix[PAD_ID] = 0.0
    content = len(vocab) - len(RESERVED)
    matched_content = sum(1 for i in rows if i >= len(RESERVED))
    coverage = matched_content / content if content else 0.0
    return EmbeddingTable(matrix, coverage, len(rows))


def save_embeddings(path, vocab: Vocabulary, matrix: np.ndarray, tokens: Sequence[str] | None = None) -> None:
    tokens = tokens if tokens is not None else vocab.tokens[len(RESERVED):]
    with open(path, "w", encoding="utf-8") as fh:
        for tok in tokens:
            vec = matrix[vocab.index[tok]]
            fh.write(tok + " " + " ".join(f"{x:.6f}" for x in vec) + "\n")


# ---------------------------------------------------------------------------
# TF-IDF + PCA
# ---------------------------------------------------------------------------


def term_frequencies(docs: Sequence[Sequence[int]], n_terms: int) -> np.ndarray:
    """Row-normalized counts over term ids ``< n_terms`` (others are dropped)."""
    out = np.zeros((len(docs), n_terms))
    for r, ids in enumerate(docs):
        if not len(ids):
            continue
        ids = np.asarray(ids)
        keep = ids[ids < n_terms]
        np.add.at(out[r], keep, 1.0)
        out[r] /= len(ids)
    return out


def smoothed_idf(docs: Sequence[Sequence[int]], n_terms: int) -> np.ndarray:
    df = np.zeros(n_terms)
    for ids in docs:
        uniq = np.unique(np.asarray(ids))
        df[uniq[uniq < n_terms]] += 1.0
    n = len(docs)
    return np.log((1.0 + n) / (1.0 + df)) + 1.0


def tail(ids: Sequence[int], last_fraction: float) -> Sequence[int]:
    k = math.ceil(last_fraction * len(ids))
    return ids[len(ids) - k:]


def power_iteration_pca(data: np.ndarray, n_components: int, tol: float = 1e-8,
                        max_iter: int = 200000, seed: int = 0):
    """Top principal axes of centered ``data`` by deflated power iteration.

    Each component iterates on the matrix with earlier axes projected out
    until ``||C v - lam v|| <= tol * lam``. Works on the smaller of the
    covariance and Gram matrices. Returns
    ``(components [k, d], variances [k], converged)``; ``k`` may be below
    ``n_components`` when the data rank is smaller.
    """
    n, d = data.shape
    use_gram = n < d
    mat = data @ data.T if use_gram else data.T @ data
    mat = mat / max(n - 1, 1)
    size = mat.shape[0]
    rng = np.random.default_rng(seed)
    vecs, vals = [], []
    converged = True
    scale = float(np.trace(mat)) or 1.0
    for _ in range(min(n_components, size)):
        U = np.stack(vecs) if vecs else np.zeros((0, size))
        v = rng.standard_normal(size)
        v -= U.T @ (U @ v)
        v /= np.linalg.norm(v)
        lam = 0.0
        ok = False
        for _ in range(max_iter):
            w = mat @ v
            w -= U.T @ (U @ w)  # deflate by projecting out the axes already found
            lam = float(v @ w)
            if lam <= 1e-12 * scale:
                break
            resid = np.linalg.norm(w - lam * v)
            if resid <= tol * lam:
                ok = True
                break
            v = w / np.linalg.norm(w)
        if lam <= 1e-12 * scale:
            break  # remaining directions carry no variance
        converged &= ok
        vecs.append(v)
        vals.append(lam)
    if not vecs:
        return np.zeros((0, d)), np.zeros(0), converged
    comps = np.stack(vecs)
    if use_gram:
        # map Gram eigenvectors u to covariance axes X^T u / ||X^T u||
        comps = comps @ data
        comps /= np.linalg.norm(comps, axis=1, keepdims=True)
    # Gram-Schmidt in component order removes the O(tol) overlap left by finite convergence
    q, r = np.linalg.qr(comps.T)
    comps = (q * np.sign(np.diag(r))).T
    # deterministic sign: largest-magnitude entry positive
    flip = np.sign(comps[np.arange(len(comps)), np.argmax(np.abs(comps), axis=1)])
    comps *= flip[:, None]
    return comps, np.asarray(vals), converged


@dataclass
class TfidfPca:
    """Fitted TF-IDF tail bag plus PCA projection of the full-document bag."""

    n_terms: int
    last_fraction: float
    idf: np.ndarray
    mean: np.ndarray
    components: np.ndarray
    rank_deficient: bool = False
    converged: bool = True

    @classmethod
    def fit(cls, docs: Sequence[Sequence[int]], n_terms: int, pca_dims: int = 128,
            last_fraction: float = 0.25, seed: int = 0) -> "TfidfPca":
        if not 0 < last_fraction <= 1:
            raise ValueError(f"last_fraction must be in (0, 1], got {last_fraction}")
        if len(docs) < pca_dims:
            raise DataError(f"need at least {pca_dims} documents for {pca_dims} PCA dims, got {len(docs)}")
        idf = smoothed_idf(docs, n_terms)
        full = term_frequencies(docs, n_terms) * idf
        mean = full.mean(axis=0)
        comps, _, converged = power_iteration_pca(full - mean, pca_dims, seed=seed)
        deficient = comps.shape[0] < pca_dims
        if deficient:
            logger.warning("PCA rank %d below requested %d dims", comps.shape[0], pca_dims)
        if not converged:
            logger.warning("PCA power iteration hit its iteration cap before tolerance")
        return cls(n_terms, last_fraction, idf, mean, comps, deficient, converged)

    def tail_bag(self, docs: Sequence[Sequence[int]]) -> np.ndarray:
        return term_frequencies([tail(d, self.last_fraction) for d in docs], self.n_terms) * self.idf

    def transform(self, docs: Sequence[Sequence[int]]) -> np.ndarray:
        full = term_frequencies(docs, self.n_terms) * self.idf
        return np.hstack([self.tail_bag(docs), (full - self.mean) @ self.components.T])


def tfidf_pca_features(corpus: Sequence[Sequence[int]], pca_dims: int, last_fraction: float = 0.25,
                       n_terms: int | None = None):
    """Fit on ``corpus`` and return ``(features, fitted_transform)``."""
    if n_terms is None:
        n_terms = 1 + max(max(d) for d in corpus)
    model = TfidfPca.fit(corpus, n_terms, pca_dims, last_fraction)
    return model.transform(corpus), model
