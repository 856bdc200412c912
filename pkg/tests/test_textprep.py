import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from satrank import synthetic
from satrank import textprep as tp
from satrank.errors import DataError


# --- scrubbing ------------------------------------------------------------


@pytest.mark.parametrize("text, expected", [
    ("call me at 555-123-4567", "call me at ⟨PHONE⟩"),
    ("refund of $43.50 on 03/04/2019", "refund of ⟨MONEY⟩ on ⟨DATE⟩"),
    ("mail jo.doe@example.com today", "mail ⟨EMAIL⟩ today"),
    ("see you at 10:30 pm", "see you at ⟨TIME⟩"),
    ("order 98765 shipped", "order ⟨NUM⟩ shipped"),
])
def test_scrub_examples(text, expected):
    assert tp.scrub_pii(text) == expected


def test_scrub_idempotent_on_corpus_lines():
    rows = synthetic.make_corpus(1000, seed=5)
    for r in rows:
        once = tp.scrub_pii(r["text"])
        assert tp.scrub_pii(once) == once


@given(st.text(alphabet=st.sampled_from(list("abc 0123456789$/-.:@()+,")), max_size=60))
def test_scrub_idempotent_property(text):
    once = tp.scrub_pii(text)
    assert tp.scrub_pii(once) == once


def test_scrubbed_text_has_no_digits():
    rows = synthetic.make_corpus(200, seed=9)
    assert not any(ch.isdigit() for r in rows for ch in tp.scrub_pii(r["text"]))


# --- vocabulary and tokenization ------------------------------------------


def test_build_vocab_order_and_min_count():
    v = tp.build_vocab(["a a b"], min_count=1)
    assert v.tokens == tp.RESERVED + ("a", "b")
    v2 = tp.build_vocab(["a a b"], min_count=2)
    assert v2.tokens == tp.RESERVED + ("a",)
    assert tp.build_vocab(["a a b"]) == v


def test_tokenize_examples():
    v = tp.Vocabulary(tp.RESERVED + ("hello",))
    doc = tp.tokenize("Hello ⟨PHONE⟩", v)
    assert doc.token_ids == [v.id("hello"), v.id("⟨PHONE⟩")]
    assert tp.tokenize("zebra", v).token_ids == [tp.UNK_ID]


def test_tokenize_empty_raises():
    with pytest.raises(DataError):
        tp.tokenize("... !!!", tp.build_vocab(["x"]))


def test_tokenize_truncation_keeps_tail():
    v = tp.build_vocab(["a b c d e"])
    doc = tp.tokenize("a b c d e", v, max_len=2)
    assert tp.detokenize(doc.token_ids, v) == "d e"


WORDS = ["alpha", "beta", "gamma", "delta", "eps"]


@given(st.lists(st.sampled_from(WORDS), min_size=1, max_size=30))
def test_detokenize_roundtrip(words):
    v = tp.build_vocab([WORDS])
    ids = tp.tokenize(" ".join(words), v).token_ids
    assert tp.tokenize(tp.detokenize(ids, v), v).token_ids == ids


def test_vocab_save_load_roundtrip(tmp_path):
    v = tp.build_vocab(["x y z y"])
    v.save(tmp_path / "v.txt")
    loaded = tp.Vocabulary.load(tmp_path / "v.txt")
    assert loaded == v and loaded.digest() == v.digest()


# --- corpus reading --------------------------------------------------------


def test_read_corpus_reports_line_number(tmp_path):
    p = tmp_path / "c.jsonl"
    p.write_text('{"id": "a", "text": "x"}\nnot json\n')
    with pytest.raises(DataError, match=":2:"):
        tp.read_corpus(p)


def test_read_corpus_rejects_duplicates_and_range(tmp_path):
    p = tmp_path / "c.jsonl"
    p.write_text('{"id": "a", "text": "x"}\n{"id": "a", "text": "y"}\n')
    with pytest.raises(DataError, match="duplicate"):
        tp.read_corpus(p)
    p.write_text('{"id": "a", "text": "x", "label": 11}\n')
    with pytest.raises(DataError, match="outside"):
        tp.read_corpus(p, (1, 10))


# --- embeddings -----------------------------------------------------------


def test_load_embeddings_basic(tmp_path):
    v = tp.Vocabulary(tp.RESERVED + ("cat",))
    p = tmp_path / "e.txt"
    p.write_text("cat 1 0\n")
    table = tp.load_embeddings(p, v)
    assert table.dim == 2
    np.testing.assert_array_equal(table.matrix[v.id("cat")], [1, 0])
    np.testing.assert_array_equal(table.matrix[tp.PAD_ID], [0, 0])


def test_embedding_coverage_three_of_five(tmp_path):
    v = tp.Vocabulary(tp.RESERVED + ("a", "b", "c", "d", "e"))
    p = tmp_path / "e.txt"
    p.write_text("2 3\n<pad> 9 9 9\na 1 2 3\nc 0 0 1\ne 1 1 1\nzzz 5 5 5\n")
    table = tp.load_embeddings(p, v)
    assert table.coverage == pytest.approx(0.6)
    np.testing.assert_array_equal(table.matrix[tp.PAD_ID], 0)
    mean = np.mean([[1, 2, 3], [0, 0, 1], [1, 1, 1]], axis=0)
    np.testing.assert_allclose(table.matrix[v.id("b")], mean)
    np.testing.assert_allclose(table.matrix[tp.UNK_ID], mean)


def test_embedding_dimension_mismatch(tmp_path):
    v = tp.Vocabulary(tp.RESERVED + ("a",))
    p = tmp_path / "e.txt"
    p.write_text("a 1 2\nb 1 2 3\n")
    with pytest.raises(DataError, match=":2:"):
        tp.load_embeddings(p, v)


def test_embedding_no_match(tmp_path):
    v = tp.Vocabulary(tp.RESERVED + ("a",))
    p = tmp_path / "e.txt"
    p.write_text("q 1 2\n")
    with pytest.raises(DataError):
        tp.load_embeddings(p, v)


# --- TF-IDF and PCA --------------------------------------------------------


def test_single_document_idf_is_one():
    idf = tp.smoothed_idf([[3, 4, 4]], 6)
    assert idf[3] == idf[4] == pytest.approx(math.log(2 / 2) + 1)


def test_tf_is_count_over_length():
    tf = tp.term_frequencies([[2, 2, 3, 9]], 5)
    np.testing.assert_allclose(tf[0], [0, 0, 0.5, 0.25, 0])


def test_tail_fraction_one_is_full_bag():
    docs = [[5, 6, 7, 5], [8, 9]]
    model = tp.TfidfPca.fit(docs, 10, pca_dims=1, last_fraction=1.0)
    full = tp.term_frequencies(docs, 10) * model.idf
    np.testing.assert_allclose(model.tail_bag(docs), full)


def test_tail_takes_ceiling_of_last_fraction():
    assert list(tp.tail([1, 2, 3, 4, 5], 0.25)) == [4, 5]


def test_two_doc_pca_matches_closed_form():
    docs = [[2, 2, 3], [3, 4]]
    feats, model = tp.tfidf_pca_features(docs, pca_dims=1, last_fraction=1.0)
    full = tp.term_frequencies(docs, 5) * model.idf
    X = full - full.mean(axis=0)
    # Two centered points x and -x: the only principal axis is x / |x|.
    axis = X[0] / np.linalg.norm(X[0])
    np.testing.assert_allclose(np.abs(feats[:, -1]), np.abs(X @ axis), atol=1e-12)
    np.testing.assert_allclose(np.abs(model.components[0]), np.abs(axis), atol=1e-10)


def test_pca_against_2x2_covariance_eigendecomposition():
    rng = np.random.default_rng(0)
    data = rng.standard_normal((40, 2)) @ np.array([[2.0, 0.3], [0.3, 0.5]])
    data -= data.mean(axis=0)
    comps, var, ok = tp.power_iteration_pca(data, 1)
    c = np.cov(data.T)
    a, b, d = c[0, 0], c[0, 1], c[1, 1]
    lam = (a + d) / 2 + math.sqrt(((a - d) / 2) ** 2 + b * b)
    v = np.array([b, lam - a])
    v /= np.linalg.norm(v)
    assert ok
    assert var[0] == pytest.approx(lam, rel=1e-10)
    assert abs(abs(comps[0] @ v) - 1) < 1e-10


def test_pca_components_orthonormal_and_sorted():
    rng = np.random.default_rng(1)
    data = rng.standard_normal((60, 12)) * np.linspace(3, 0.2, 12)
    data -= data.mean(axis=0)
    comps, var, ok = tp.power_iteration_pca(data, 6)
    assert ok
    np.testing.assert_allclose(comps @ comps.T, np.eye(6), atol=1e-8)
    proj_var = (data @ comps.T).var(axis=0, ddof=1)
    assert np.all(np.diff(proj_var) <= 1e-12)


def test_pca_rank_deficiency_flag():
    docs = [[2], [2], [3]]
    model = tp.TfidfPca.fit(docs, 4, pca_dims=3)
    assert model.rank_deficient and model.components.shape[0] == 1


def test_pca_requires_enough_docs():
    with pytest.raises(DataError):
        tp.TfidfPca.fit([[2, 3]], 4, pca_dims=2)


def test_tokenized_document_json_roundtrip():
    d = tp.TokenizedDocument("x", [2, 3], 4.0, "2019-01-01T00:00:00Z", {"rep": "A"})
    assert tp.TokenizedDocument.from_json(json.loads(json.dumps(d.to_json()))) == d
