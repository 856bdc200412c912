import csv
import json
from pathlib import Path

import numpy as np
import pytest

from satrank import checkpoint as ck
from satrank import cli
from satrank.textprep import build_vocab

FIXTURES = Path(__file__).parent / "fixtures"


def write_config(work, **extra):
    cfg = {
        "paths": {"corpus": str(FIXTURES / "corpus.jsonl"), "embeddings": str(FIXTURES / "embeddings.txt"),
                  "work_dir": str(work)},
        "split": {"policy": "on-date"},
        "encoder": {"widths": [2, 3], "maps": 8},
        "gnn": {"epochs": 3, "groups_per_batch": 8, "alpha": 1e-3, "l2": 1e-4, "anchors": 6},
        "score": {"timestamp": "2020-01-01T00:00:00Z"},
    }
    for section, values in extra.items():
        cfg.setdefault(section, {}).update(values)
    path = Path(work) / "config.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(cfg))
    return ["--config", str(path)]


def run_all(work):
    base = write_config(work)
    for step in ("preprocess", "train", "calibrate", "score", "evaluate", "aggregate"):
        assert cli.main([step] + base) == 0, step
    return base


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    work = tmp_path_factory.mktemp("run")
    return work, run_all(work)


def test_pipeline_outputs(pipeline):
    work, _ = pipeline
    for name in ("vocab.txt", "manifest.json", "model.ckpt", "model.calibrated.ckpt", "scores.csv",
                 "metrics.jsonl", "training_curves.png", "calibration.png", "aggregates.csv",
                 "report/report.txt", "report/report.jsonl", "report/precision_at_k.png"):
        assert (work / name).exists(), name
    assert not (work / "metrics.jsonl.partial").exists()


def test_manifest_counts_and_date_order(pipeline):
    work, _ = pipeline
    m = json.loads((work / "manifest.json").read_text())
    assert sum(m["counts"].values()) + m["skipped_empty"] == 120
    assert m["timestamps"]["train"]["max"] <= m["timestamps"]["test"]["min"]
    assert m["timestamps"]["val"]["max"] <= m["timestamps"]["test"]["min"]


def test_calibrated_scores_stay_on_scale(pipeline):
    work, _ = pipeline
    rows = read_csv(work / "scores.csv")
    assert len(rows) == 120
    cal = np.array([float(r["calibrated"]) for r in rows])
    assert np.all((cal >= 1.0) & (cal <= 10.0))
    assert {r["checkpoint_hash"] for r in rows} == {ck.file_hash(work / "model.calibrated.ckpt")}


def snapshot(work):
    return {str(p.relative_to(work)): p.read_bytes() for p in sorted(work.rglob("*")) if p.is_file()}


def test_rerun_in_same_work_dir_is_byte_identical(tmp_path):
    run_all(tmp_path)
    first = snapshot(tmp_path)
    run_all(tmp_path)
    second = snapshot(tmp_path)
    assert first.keys() == second.keys()
    assert [k for k in first if first[k] != second[k]] == []


def test_single_document_scoring(pipeline, tmp_path):
    work, base = pipeline
    one = tmp_path / "one.jsonl"
    one.write_text(json.dumps({"id": "x", "text": "mulo musa"}) + "\n" + json.dumps({"id": "y", "text": ""}) + "\n")
    out = tmp_path / "s.csv"
    assert cli.main(["score", *base, "--paths.input", str(one), "--paths.scores", str(out)]) == 0
    assert [r["id"] for r in read_csv(out)] == ["x", "y"]


def test_vocab_mismatch_is_a_data_error(pipeline, tmp_path, capsys):
    work, base = pipeline
    other = tmp_path / "other"
    other.mkdir()
    build_vocab(["zzz yyy"]).save(other / "vocab.txt")
    code = cli.main(["score", *base, "--paths.work_dir", str(other),
                     "--paths.checkpoint", str(work / "model.ckpt"), "--paths.input", str(FIXTURES / "corpus.jsonl")])
    assert code == 3
    assert "vocabulary mismatch" in capsys.readouterr().err


def test_calibrate_needs_ten_labelled_docs(tmp_path):
    corpus = tmp_path / "c.jsonl"
    src = (FIXTURES / "corpus.jsonl").read_text().splitlines()[:10]
    corpus.write_text("\n".join(src) + "\n")
    base = write_config(tmp_path / "w", paths={"corpus": str(corpus)})
    assert cli.main(["preprocess", *base]) == 0
    m = json.loads((tmp_path / "w" / "manifest.json").read_text())
    assert sum(m["counts"].values()) == 10
    assert cli.main(["train", *base]) == 0
    assert cli.main(["calibrate", *base]) == 3


@pytest.mark.parametrize("argv, code", [
    (["train", "--gnn.epochs", "lots"], 2),
    (["train", "--model", "svm"], 2),
    (["preprocess", "--config", "/nonexistent.json"], 2),
    (["preprocess", "--paths.corpus", "/nonexistent.jsonl"], 3),
    (["score", "--paths.work_dir", "/nonexistent"], 3),
])
def test_exit_codes(argv, code):
    assert cli.main(argv) == code


def test_unknown_flag_exits_with_usage():
    with pytest.raises(SystemExit) as exc:
        cli.main(["train", "--gnn.nope", "1"])
    assert exc.value.code == 2


def score_row(i, value, key, ts):
    return {"id": f"d{i}", "raw": "0.1", "calibrated": str(value), "model": "m", "checkpoint_hash": "h",
            "ts": "2020-01-01T00:00:00Z", "doc_ts": ts, "group_keys": json.dumps({"rep": key} if key else {})}


def test_aggregate_mean_and_count():
    rows = [score_row(i, v, "A", "2021-03-01T10:00:00Z") for i, v in enumerate((8, 9, 10))]
    out, skipped = cli.aggregate_rows(rows, "rep", "day")
    assert out == [["A", "2021-03-01", "9.0", 3]] and skipped == 0


def test_aggregate_day_boundary_and_skips():
    rows = [score_row(0, 4, "A", "2021-03-01T23:59:59Z"), score_row(1, 6, "A", "2021-03-02T00:00:00Z"),
            score_row(2, 5, None, "2021-03-01T12:00:00Z"), score_row(3, 5, "A", "")]
    out, skipped = cli.aggregate_rows(rows, "rep", "day")
    assert [r[1] for r in out] == ["2021-03-01", "2021-03-02"] and skipped == 2


def test_periods():
    t = cli.parse_ts("2021-03-04T05:00:00+02:00")
    assert cli.period_start(t, "week").isoformat() == "2021-03-01"
    assert cli.period_start(t, "month").isoformat() == "2021-03-01"


def test_aggregate_of_empty_scores_is_header_only(tmp_path):
    scores = tmp_path / "s.csv"
    scores.write_text(",".join(cli.SCORE_HEADER) + "\n")
    out = tmp_path / "agg.csv"
    assert cli.main(["aggregate", "--paths.scores", str(scores), "--paths.aggregates", str(out)]) == 0
    assert out.read_text().splitlines() == [",".join(cli.AGGREGATE_HEADER)]


@pytest.mark.parametrize("model", ["rs", "lasso", "cnn-mse"])
def test_baseline_models_through_cli(pipeline, tmp_path, model):
    work, base = pipeline
    ckpt, out = tmp_path / "m.ckpt", tmp_path / "s.csv"
    extra = ["--paths.checkpoint", str(ckpt), "--text.pca_dims", "8", "--rs.epochs", "2", "--gnn.epochs", "2"]
    assert cli.main(["train", *base, "--model", model, *extra]) == 0
    assert cli.main(["score", *base, "--paths.checkpoint", str(ckpt), "--paths.scores", str(out)]) == 0
    rows = read_csv(out)
    assert {r["model"] for r in rows} == {model} and all(np.isfinite(float(r["raw"])) for r in rows)
