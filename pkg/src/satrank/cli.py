"""Command-line entry point.

    satrank preprocess | train | calibrate | score | evaluate | aggregate

Every command reads the same JSON config (``--config``) and accepts any config
field as a dotted flag, e.g. ``--gnn.epochs 5 --paths.work_dir out``.

Exit codes: 0 success, 2 usage/config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import io
import json
import logging
import math
import os
import sys
import tempfile
import time
from collections import defaultdict
from pathlib import Path

import numpy as np

from satrank import checkpoint as ck
from satrank import plotting
from satrank.calibrate import fit_isotonic
from satrank.config import RunConfig, leaf_fields, load_config
from satrank.errors import ConfigError, DataError, NumericError
from satrank.evaluation import RelevanceRule, make_report, render_table, report_jsonl
from satrank.pipeline import Scorer, train_model
from satrank.textprep import (
    UNK_ID,
    TokenizedDocument,
    Vocabulary,
    build_vocab,
    read_corpus,
    read_tokenized,
    scrub_pii,
    split_tokens,
    tokenize,
    write_jsonl,
)

logger = logging.getLogger("satrank")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
SCORE_HEADER = ["id", "raw", "calibrated", "model", "checkpoint_hash", "ts", "doc_ts", "group_keys"]
AGGREGATE_HEADER = ["key", "period_start", "mean", "count"]


# ---------------------------------------------------------------------------
# Small helpers
# ---------------------------------------------------------------------------


def parse_ts(value: str) -> dt.datetime:
    """ISO-8601 to an aware UTC datetime; naive values are taken as UTC."""
    s = value.strip()
    if s.endswith("Z"):
        s = s[:-1] + "+00:00"
    try:
        t = dt.datetime.fromisoformat(s)
    except ValueError:
        raise DataError(f"bad ISO-8601 timestamp {value!r}") from None
    if t.tzinfo is None:
        t = t.replace(tzinfo=dt.timezone.utc)
    return t.astimezone(dt.timezone.utc)


def write_text_atomic(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent)
    with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def fmt_float(x) -> str:
    return repr(float(x))


def _rows_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise DataError(f"{what} not found: {path} (run the earlier pipeline step first)")
    return path


# ---------------------------------------------------------------------------
# preprocess
# ---------------------------------------------------------------------------


def split_indices(docs, cfg: RunConfig) -> dict[str, list[int]]:
    n = len(docs)
    n_test = max(1, round(cfg.split.test_fraction * n)) if n >= 3 else 0
    n_val = max(1, round(cfg.split.val_fraction * n)) if n >= 3 else 0
    rng = np.random.default_rng(cfg.seed)
    if cfg.split.policy == "on-date":
        missing = [d.id for d in docs if not d.timestamp]
        if missing:
            raise DataError(f"on-date split needs timestamps; missing for {missing[:10]}")
        order = sorted(range(n), key=lambda i: (parse_ts(docs[i].timestamp), docs[i].id))
        test = order[n - n_test:]
        rest = np.array(order[: n - n_test])
        rest = list(rest[rng.permutation(len(rest))])
    else:
        perm = list(rng.permutation(n))
        test, rest = perm[:n_test], perm[n_test:]
    val, train = rest[:n_val], rest[n_val:]
    return {"train": sorted(int(i) for i in train), "val": sorted(int(i) for i in val),
            "test": sorted(int(i) for i in test)}


def cmd_preprocess(cfg: RunConfig) -> int:
    """Tokenize the scrubbed corpus and write the vocabulary with its splits."""
    if not cfg.paths.corpus:
        raise ConfigError("preprocess needs paths.corpus")
    try:
        docs = read_corpus(cfg.paths.corpus, (cfg.eval.scale_lo, cfg.eval.scale_hi))
    except FileNotFoundError:
        raise DataError(f"corpus not found: {cfg.paths.corpus}") from None
    if not docs:
        raise DataError(f"corpus {cfg.paths.corpus} is empty")
    tokens = []
    kept = []
    for d in docs:
        toks = split_tokens(scrub_pii(d.text))
        if toks:
            kept.append(d)
            tokens.append(toks)
    skipped = len(docs) - len(kept)
    if skipped:
        logger.warning("%d documents without tokens skipped", skipped)
    if not kept:
        raise DataError("no document has any tokens")
    splits = split_indices(kept, cfg)
    vocab = build_vocab([tokens[i] for i in splits["train"]] or tokens, cfg.text.min_count,
                        cfg.text.max_vocab or None)
    work = Path(cfg.paths.work_dir)
    work.mkdir(parents=True, exist_ok=True)
    vocab.save(work / "vocab.txt")
    ts_bounds = {}
    for name, idx in splits.items():
        rows = []
        for i in idx:
            d = kept[i]
            rows.append(tokenize(" ".join(tokens[i]), vocab, cfg.text.max_len, d.id, d.label,
                                 d.timestamp, d.group_keys).to_json())
        write_jsonl(work / f"{name}.jsonl", rows)
        stamps = [parse_ts(kept[i].timestamp) for i in idx if kept[i].timestamp]
        if stamps:
            ts_bounds[name] = {"min": min(stamps).isoformat(), "max": max(stamps).isoformat()}
    manifest = {
        "source": Path(cfg.paths.corpus).name,
        "source_sha256": ck.file_hash(cfg.paths.corpus),
        "seed": cfg.seed,
        "split_policy": cfg.split.policy,
        "val_fraction": cfg.split.val_fraction,
        "test_fraction": cfg.split.test_fraction,
        "counts": {k: len(v) for k, v in splits.items()},
        "skipped_empty": skipped,
        "vocab_size": len(vocab),
        "vocab_hash": vocab.digest(),
        "timestamps": ts_bounds,
    }
    write_text_atomic(work / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"preprocessed {len(kept)} documents -> {work} "
          f"(train {len(splits['train'])}, val {len(splits['val'])}, test {len(splits['test'])})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train / calibrate
# ---------------------------------------------------------------------------


def _load_vocab(cfg: RunConfig) -> Vocabulary:
    return Vocabulary.load(_require(cfg.work_path("vocab.txt"), "vocabulary"))


def _load_split(cfg: RunConfig, name: str) -> list[TokenizedDocument]:
    return read_tokenized(_require(cfg.work_path(f"{name}.jsonl"), f"{name} split"))


def cmd_train(cfg: RunConfig) -> int:
    """Train the configured model and write a checkpoint."""
    vocab = _load_vocab(cfg)
    train_docs, val_docs = _load_split(cfg, "train"), _load_split(cfg, "val")
    metrics_path = cfg.work_path("metrics.jsonl")
    metrics_path.parent.mkdir(parents=True, exist_ok=True)
    log_tmp = metrics_path.with_suffix(".jsonl.partial")
    with open(log_tmp, "w", encoding="utf-8") as log:
        def on_epoch(row):
            log.write(json.dumps(row, sort_keys=True) + "\n")
            log.flush()
            logger.info("epoch %s: %s", row.get("epoch"), row)

        ckpt = train_model(cfg, vocab, train_docs, val_docs, on_epoch)
    digest = ck.save(ckpt, cfg.checkpoint_path)
    os.replace(log_tmp, metrics_path)
    history = ckpt.meta.get("history", [])
    if history:
        plotting.plot_training_curves(history, cfg.work_path("training_curves.png"), title=cfg.model)
    print(f"trained {cfg.model}: checkpoint {cfg.checkpoint_path} ({digest})")
    return EXIT_OK


def cmd_calibrate(cfg: RunConfig) -> int:
    """Fit the isotonic map on a labelled split."""
    ckpt = ck.load(cfg.checkpoint_path)
    vocab = _load_vocab(cfg)
    _check_vocab(ckpt, vocab)
    docs = [d for d in _load_split(cfg, cfg.calibrate.split) if d.label is not None]
    if len(docs) < 10:
        raise DataError(f"calibration split {cfg.calibrate.split!r} has {len(docs)} labelled documents; need 10")
    raw = Scorer(ckpt).raw(docs)
    targets = np.array([d.label for d in docs])
    mapping = fit_isotonic(raw, targets, cfg.eval.scale_lo, cfg.eval.scale_hi)
    ckpt.meta["isotonic"] = mapping.to_json()
    digest = ck.save(ckpt, cfg.calibrated_path)
    plotting.plot_calibration(mapping, raw, targets, cfg.work_path("calibration.png"))
    print(f"calibrated on {len(docs)} documents ({len(mapping.breakpoints)} knots): "
          f"{cfg.calibrated_path} ({digest})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# score / evaluate / aggregate
# ---------------------------------------------------------------------------


def _check_vocab(ckpt: ck.Checkpoint, vocab: Vocabulary) -> None:
    if ckpt.vocab_hash != vocab.digest():
        raise DataError(f"vocabulary mismatch: checkpoint {ckpt.vocab_hash} vs preprocessing {vocab.digest()}")


def scoring_checkpoint(cfg: RunConfig) -> Path:
    if cfg.paths.checkpoint:
        return Path(cfg.paths.checkpoint)
    return cfg.calibrated_path if cfg.calibrated_path.exists() else cfg.checkpoint_path


def cmd_score(cfg: RunConfig) -> int:
    """Score a corpus with a checkpoint."""
    path = scoring_checkpoint(cfg)
    data = _require(path, "checkpoint").read_bytes()
    digest = ck.content_hash(data)
    ckpt = ck.Checkpoint.from_bytes(data)
    vocab = _load_vocab(cfg)
    _check_vocab(ckpt, vocab)
    source = cfg.paths.input or cfg.paths.corpus
    if not source:
        raise ConfigError("score needs paths.input (or paths.corpus)")
    try:
        raw_docs = read_corpus(source)
    except FileNotFoundError:
        raise DataError(f"input corpus not found: {source}") from None
    docs = []
    for d in raw_docs:
        text = scrub_pii(d.text)
        if split_tokens(text):
            docs.append(tokenize(text, vocab, cfg.text.max_len, d.id))
        else:
            docs.append(TokenizedDocument(d.id, [UNK_ID]))
    scorer = Scorer(ckpt)
    raw = scorer.raw(docs)
    cal = scorer.calibrated(raw) if len(raw) else None
    stamp = cfg.score.timestamp or dt.datetime.now(dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
    rows = []
    for i, d in enumerate(raw_docs):
        rows.append([d.id, fmt_float(raw[i]), "" if cal is None else fmt_float(cal[i]), ckpt.kind, digest, stamp,
                     d.timestamp or "", json.dumps(d.group_keys, sort_keys=True, ensure_ascii=False)])
    out = Path(cfg.paths.scores) if cfg.paths.scores else cfg.work_path("scores.csv")
    write_text_atomic(out, _rows_csv(SCORE_HEADER, rows))
    print(f"scored {len(rows)} documents with {ckpt.kind} ({digest}) -> {out}")
    return EXIT_OK


def read_scores(path) -> list[dict]:
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not set(SCORE_HEADER[:6]) <= set(reader.fieldnames):
                raise DataError(f"{path}: not a score file (header {reader.fieldnames})")
            return list(reader)
    except FileNotFoundError:
        raise DataError(f"score file not found: {path}") from None


def read_labels(path) -> dict[str, float]:
    labels = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError:
                    raise DataError(f"{path}:{lineno}: malformed JSON") from None
                if obj.get("label") is not None:
                    labels[str(obj["id"])] = float(obj["label"])
    except FileNotFoundError:
        raise DataError(f"label file not found: {path}") from None
    return labels


def cmd_evaluate(cfg: RunConfig) -> int:
    """Spearman and Precision@k report for score files."""
    started = time.perf_counter()
    rule = RelevanceRule(cfg.eval.relevance_rule)
    labels = read_labels(cfg.paths.labels or cfg.work_path("test.jsonl"))
    if not labels:
        raise DataError("no labelled documents to evaluate against")
    files = [p for p in cfg.paths.scores.split(",") if p.strip()] or [str(cfg.work_path("scores.csv"))]
    reports = []
    for f in files:
        rows = read_scores(f.strip())
        model = rows[0]["model"] if rows else Path(f).stem
        col = cfg.eval.column
        scores = {}
        for r in rows:
            if r["id"] in labels:
                if not r[col]:
                    raise DataError(f"{f}: empty {col} score for {r['id']!r}")
                scores[r["id"]] = float(r[col])
        report = make_report(model, scores, labels, rule, cfg.eval.split)
        report.runtime_seconds = time.perf_counter() - started
        reports.append(report)
    out = cfg.report_dir
    title = f"{cfg.eval.split}: Spearman x100 and Precision@k"
    table = render_table(reports, title, cfg.eval.show_runtime)
    write_text_atomic(out / "report.txt", table)
    write_text_atomic(out / "report.jsonl", report_jsonl(reports))
    plotting.plot_precision_at_k(reports, out / "precision_at_k.png")
    print(table, end="")
    return EXIT_OK


def period_start(t: dt.datetime, period: str) -> dt.date:
    d = t.date()
    if period == "week":
        return d - dt.timedelta(days=d.weekday())
    if period == "month":
        return d.replace(day=1)
    return d


def aggregate_rows(rows: list[dict], group_key: str, period: str) -> tuple[list[list], int]:
    """Mean score and count per (group value, period); returns rows and skip count."""
    sums: dict[tuple[str, str], list[float]] = defaultdict(list)
    skipped = 0
    for r in rows:
        try:
            keys = json.loads(r.get("group_keys") or "{}")
        except json.JSONDecodeError:
            keys = {}
        key = keys.get(group_key)
        if key is None or not r.get("doc_ts"):
            skipped += 1
            continue
        value = r["calibrated"] if r.get("calibrated") else r["raw"]
        sums[(str(key), period_start(parse_ts(r["doc_ts"]), period).isoformat())].append(float(value))
    out = [[k, p, fmt_float(math.fsum(v) / len(v)), len(v)] for (k, p), v in sorted(sums.items())]
    return out, skipped


def cmd_aggregate(cfg: RunConfig) -> int:
    """Mean score and count per group key and period."""
    src = cfg.paths.scores.split(",")[0].strip() if cfg.paths.scores else str(cfg.work_path("scores.csv"))
    rows = read_scores(src)
    out_rows, skipped = aggregate_rows(rows, cfg.aggregate.group_key, cfg.aggregate.period)
    if skipped:
        print(f"warning: {skipped} rows skipped (missing group key {cfg.aggregate.group_key!r} or timestamp)",
              file=sys.stderr)
    write_text_atomic(cfg.aggregates_path, _rows_csv(AGGREGATE_HEADER, out_rows))
    print(f"aggregated {len(rows) - skipped} rows into {len(out_rows)} groups -> {cfg.aggregates_path}")
    return EXIT_OK


COMMANDS = {
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "calibrate": cmd_calibrate,
    "score": cmd_score,
    "evaluate": cmd_evaluate,
    "aggregate": cmd_aggregate,
}


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    for name, default in leaf_fields():
        shown = ",".join(map(str, default)) if isinstance(default, list) else default
        common.add_argument(f"--{name}", dest=f"cfg:{name}", default=argparse.SUPPRESS, metavar="VALUE",
                            help=f"(default: {shown!r})")
    parser = argparse.ArgumentParser(prog="satrank", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=(fn.__doc__ or name).strip().split("\n")[0])
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg:")}
    try:
        cfg = load_config(args.config, overrides)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"satrank: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"satrank: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"satrank: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
