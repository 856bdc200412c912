"""Amazon product reviews: conversion to the corpus format and a desk-scale run.

The 5-core review dumps hold one review per line with ``reviewerID``, ``asin``,
``overall`` (1-5 stars), ``reviewText`` and ``unixReviewTime``. A review counts
as relevant when its rating is 1.

    python -m satrank.amazon --reviews reviews_Electronics_5.json.gz \\
        --glove glove.6B.100d.txt --work-dir amazon-run

The subsample is picked by a seeded hash of the review id, so the same
``seed`` selects the same reviews regardless of file order.
"""

from __future__ import annotations

import argparse
import ast
import datetime as dt
import gzip
import hashlib
import heapq
import json
import sys
from pathlib import Path

from satrank import cli
from satrank.errors import DataError

RELEVANCE_RULE = "label == 1"


def _open(path):
    path = Path(path)
    return gzip.open(path, "rt", encoding="utf-8") if path.suffix == ".gz" else open(path, encoding="utf-8")


def _parse(line: str) -> dict:
    try:
        return json.loads(line)
    except json.JSONDecodeError:
        return ast.literal_eval(line)  # the older dumps are Python dict literals


def review_to_row(r: dict) -> dict | None:
    text = " ".join(t for t in (r.get("summary", ""), r.get("reviewText", "")) if t).strip()
    if not text or r.get("overall") is None:
        return None
    row = {"id": f"{r.get('reviewerID', '')}-{r.get('asin', '')}", "text": text, "label": float(r["overall"]),
           "group_keys": {"asin": str(r.get("asin", ""))}}
    if r.get("unixReviewTime") is not None:
        ts = dt.datetime.fromtimestamp(int(r["unixReviewTime"]), dt.timezone.utc)
        row["timestamp"] = ts.strftime("%Y-%m-%dT%H:%M:%SZ")
    return row


def convert(reviews_path, out_path, n: int, seed: int = 0) -> int:
    """Write a seeded ``n``-review subsample in corpus format; returns the count."""
    heap: list[tuple[int, str, dict]] = []
    seen = set()
    with _open(reviews_path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = review_to_row(_parse(line))
            except (ValueError, SyntaxError):
                raise DataError(f"{reviews_path}:{lineno}: unreadable review") from None
            if row is None or row["id"] in seen:
                continue
            seen.add(row["id"])
            key = -int.from_bytes(hashlib.blake2b(f"{seed}:{row['id']}".encode(), digest_size=8).digest(), "big")
            if len(heap) < n:
                heapq.heappush(heap, (key, row["id"], row))
            elif key > heap[0][0]:
                heapq.heapreplace(heap, (key, row["id"], row))
    rows = sorted((r for _, _, r in heap), key=lambda r: r["id"])
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as fh:
        for r in rows:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    return len(rows)


def _subset(corpus_path, split_path, out_path) -> None:
    keep = {json.loads(line)["id"] for line in open(split_path, encoding="utf-8") if line.strip()}
    with open(corpus_path, encoding="utf-8") as src, open(out_path, "w", encoding="utf-8") as dst:
        for line in src:
            if line.strip() and json.loads(line)["id"] in keep:
                dst.write(line)


def desk_config(work_dir, corpus, glove, seed: int = 0) -> dict:
    """Config for the 20k-train / 5k-test run; scaled down from the full-size defaults for one CPU."""
    total = 20000 + 2500 + 5000
    return {
        "seed": seed,
        "paths": {"corpus": str(corpus), "embeddings": str(glove), "work_dir": str(work_dir)},
        "text": {"max_len": 256, "min_count": 2, "max_vocab": 50000},
        "split": {"policy": "random-fraction", "val_fraction": 2500 / total, "test_fraction": 5000 / total},
        "encoder": {"widths": [3, 4, 5], "maps": 50},
        "gnn": {"epochs": 20, "groups_per_batch": 16, "alpha": 1e-3, "l2": 1e-4, "patience": 5,
                "anchors": 16},
        "rs": {"epochs": 20},
        "eval": {"relevance_rule": RELEVANCE_RULE, "scale_lo": 1, "scale_hi": 5},
        "score": {"timestamp": "1970-01-01T00:00:00Z"},
    }


def run(reviews, glove, work_dir, seed: int = 0) -> dict:
    """Convert, train CNN-GNN and RS on the same split, and evaluate both on the test split."""
    work = Path(work_dir)
    work.mkdir(parents=True, exist_ok=True)
    corpus = work / "amazon_corpus.jsonl"
    if not corpus.exists():
        convert(reviews, corpus, 27500, seed)
    cfg_path = work / "config.json"
    cfg_path.write_text(json.dumps(desk_config(work, corpus, glove, seed), indent=2) + "\n")
    base = ["--config", str(cfg_path)]

    def step(*argv):
        code = cli.main(list(argv) + base)
        if code:
            raise RuntimeError(f"satrank {argv[0]} failed with exit code {code}")

    step("preprocess")
    _subset(corpus, work / "test.jsonl", work / "test_raw.jsonl")
    scores = []
    for model in ("cnn-gnn", "rs"):
        ckpt, out = work / f"{model}.ckpt", work / f"{model}_scores.csv"
        step("train", "--model", model, "--paths.checkpoint", str(ckpt))
        step("score", "--paths.checkpoint", str(ckpt), "--paths.input", str(work / "test_raw.jsonl"),
             "--paths.scores", str(out))
        scores.append(str(out))
    step("evaluate", "--paths.scores", ",".join(scores))
    reports: dict[str, dict] = {}
    for line in open(work / "report" / "report.jsonl", encoding="utf-8"):
        r = json.loads(line)
        reports.setdefault(r["model"], {})[r["metric"]] = r["value"]
    return reports


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--reviews", required=True, help="5-core reviews file (.json or .json.gz)")
    ap.add_argument("--glove", required=True, help="GloVe text vectors")
    ap.add_argument("--work-dir", default="amazon-run")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    reports = run(args.reviews, args.glove, args.work_dir, args.seed)
    print(json.dumps(reports, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
