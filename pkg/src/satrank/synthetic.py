"""Seeded synthetic corpora with a planted, learnable ranking signal.

Each document is filler text plus ``s`` distinct marker words; its ordinal
label is ``1 + s`` with a little symmetric noise, clipped to the 1-10 scale.
The latent ``s`` is therefore the oracle for how learnable the ranking is.
"""

from __future__ import annotations

import datetime as dt
import itertools
import json

import numpy as np

_SYLLABLES = ["ba", "ko", "ri", "mu", "te", "lo", "sa", "ne", "vi", "da", "pe", "zu", "ga", "fo", "hi"]


def pseudo_words(count: int, offset: int = 0) -> list[str]:
    """Deterministic letter-only words (digits would be scrubbed to NUM)."""
    words = ("".join(p) for r in (2, 3) for p in itertools.product(_SYLLABLES, repeat=r))
    return list(itertools.islice(words, offset, offset + count))


MARKERS = [f"mark{w}" for w in pseudo_words(9)]
FILLER = pseudo_words(300, offset=50)
_EXTRAS = ["call me at 555-{:03d}-{:04d}", "refund of ${}.{:02d}", "on 03/{:02d}/2019", "at {}:{:02d} pm"]


def _extra(rng: np.random.Generator) -> str:
    t = _EXTRAS[rng.integers(len(_EXTRAS))]
    return t.format(*(int(x) for x in rng.integers(1, 59, size=t.count("{"))))


def make_corpus(n_docs: int, seed: int = 0, min_len: int = 30, max_len: int = 80,
                noise: float = 0.3, start: str = "2019-01-01", days: int = 365) -> list[dict]:
    rng = np.random.default_rng(seed)
    zipf = 1.0 / np.arange(1, len(FILLER) + 1)
    zipf /= zipf.sum()
    t0 = dt.datetime.fromisoformat(start).replace(tzinfo=dt.timezone.utc)
    reps = ["A", "B", "C", "D", "E", "F", "G", "H"]
    rows = []
    for i in range(n_docs):
        s = int(rng.integers(0, len(MARKERS) + 1))
        words = list(rng.choice(FILLER, size=int(rng.integers(min_len, max_len + 1)), p=zipf))
        for m in rng.choice(MARKERS, size=s, replace=False):
            words.insert(int(rng.integers(0, len(words) + 1)), str(m))
        if rng.random() < 0.3:
            words.insert(int(rng.integers(0, len(words) + 1)), _extra(rng))
        jitter = rng.choice([-1, 0, 1], p=[noise / 2, 1 - noise, noise / 2])
        label = float(np.clip(1 + s + jitter, 1, 10))
        ts = t0 + dt.timedelta(seconds=int(rng.integers(0, days * 86400)))
        rows.append({"id": f"doc{i:05d}", "text": " ".join(words), "label": label,
                     "timestamp": ts.strftime("%Y-%m-%dT%H:%M:%SZ"),
                     "group_keys": {"rep": reps[int(rng.integers(len(reps)))],
                                    "queue": "billing" if rng.random() < 0.5 else "claims"}})
    return rows


def make_embeddings(dim: int = 16, seed: int = 0) -> dict[str, np.ndarray]:
    """Random unit-scale vectors for every synthetic word (markers included)."""
    rng = np.random.default_rng(seed)
    words = FILLER + MARKERS + ["call", "me", "at", "refund", "of", "on", "pm"]
    return {w: rng.standard_normal(dim) / np.sqrt(dim) for w in words}


def write_corpus(path, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def write_embeddings(path, vectors: dict[str, np.ndarray], header: bool = False) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if header:
            fh.write(f"{len(vectors)} {len(next(iter(vectors.values())))}\n")
        for w, v in vectors.items():
            fh.write(w + " " + " ".join(f"{x:.6f}" for x in v) + "\n")
