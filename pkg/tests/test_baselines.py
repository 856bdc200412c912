import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from satrank import baselines as bl
from satrank import numerics as nx
from satrank import synthetic
from satrank import textprep as tp
from satrank.encoder import CnnEncoderParams
from satrank.errors import DataError


# --- pairwise linear ranker ---------------------------------------------------


def test_zero_weights_give_ln2_per_pair():
    s = np.zeros(6)
    loss = bl.pairwise_logistic_loss(nx.Tensor(s), nx.Tensor(s), [1, 0, 0.5, 1, 0, 1]).item()
    assert loss == pytest.approx(math.log(2), abs=1e-15)


def test_separable_toy_reaches_perfect_pairwise_accuracy():
    y = np.arange(1, 21, dtype=float)
    X = y[:, None].copy()
    m = bl.train_linear_ranker(X, y, bl.RankerConfig(pairs_per_step=40, alpha=0.05, epochs=30, seed=1))
    s = m.score(X)
    pairs = [(i, j) for i in range(20) for j in range(20) if y[i] > y[j]]
    assert all(s[i] > s[j] for i, j in pairs)


@given(st.floats(0.01, 100), st.integers(0, 1000))
def test_positive_feature_scaling_keeps_order(c, seed):
    rng = np.random.default_rng(seed)
    X, w = rng.standard_normal((15, 3)), rng.standard_normal(3)
    m = bl.LinearModelParams(w)
    assert np.argsort(m.score(X), kind="stable").tolist() == np.argsort(m.score(c * X), kind="stable").tolist()


def test_ranker_history_and_determinism():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((50, 4))
    y = X @ [1, -1, 0, 2] + 0.1 * rng.standard_normal(50)
    hist = []
    cfg = bl.RankerConfig(pairs_per_step=32, epochs=5, seed=3)
    a = bl.train_linear_ranker(X, y, cfg, hist)
    b = bl.train_linear_ranker(X, y, cfg)
    assert len(hist) == 5 and hist[-1] < hist[0]
    np.testing.assert_array_equal(a.w, b.w)


# --- lasso ------------------------------------------------------------------


def standardized(n, d, seed):
    X = np.random.default_rng(seed).standard_normal((n, d))
    return bl.Standardizer.fit(X).transform(X)


def lasso_sign_oracle(X, y, lam):
    """Exact 2-feature lasso: try every sign pattern, keep KKT-consistent ones."""
    n, d = X.shape
    b = y.mean()
    r = y - b
    best = (math.inf, None)
    for signs in itertools.product((-1, 0, 1), repeat=d):
        active = [j for j in range(d) if signs[j]]
        w = np.zeros(d)
        if active:
            A = X[:, active]
            s = np.array([signs[j] for j in active], dtype=float)
            w_a = np.linalg.solve(A.T @ A / n, A.T @ r / n - lam * s)
            if np.any(np.sign(w_a) != s):
                continue
            w[active] = w_a
        grad = X.T @ (r - X @ w) / n
        inactive = [j for j in range(d) if not signs[j]]
        if any(abs(grad[j]) > lam + 1e-12 for j in inactive):
            continue
        obj = bl.lasso_objective(X, y, w, b, lam)
        if obj < best[0]:
            best = (obj, w)
    return best[1]


def test_large_lambda_zeroes_weights():
    X = standardized(40, 3, 0)
    y = X @ [1.0, 0.5, -2.0] + 3.0
    m = bl.train_lasso(X, y, bl.lambda_max(X, y) * 1.0001)
    assert np.all(m.w == 0) and m.b == pytest.approx(y.mean())


def test_lambda_zero_orthonormal_design_is_least_squares():
    X = np.array([[1, 1], [1, -1], [-1, 1], [-1, -1]], dtype=float)
    y = np.array([3.0, 1.0, 2.0, -1.0])
    m = bl.train_lasso(X, y, 0.0)
    ols, *_ = np.linalg.lstsq(np.column_stack([X, np.ones(4)]), y, rcond=None)
    np.testing.assert_allclose(m.w, ols[:2], atol=1e-12)
    assert m.b == pytest.approx(ols[2])


@pytest.mark.parametrize("seed", range(5))
def test_two_feature_lasso_matches_sign_oracle(seed):
    rng = np.random.default_rng(seed)
    X = standardized(30, 2, seed)
    y = X @ rng.standard_normal(2) + 0.5 * rng.standard_normal(30)
    m = bl.train_lasso(X, y, 0.1, max_iters=10000, tol=1e-13)
    w_star = lasso_sign_oracle(X, y, 0.1)
    np.testing.assert_allclose(m.w, w_star, atol=1e-6)
    grid = np.linspace(-3, 3, 121)
    coarse = min(bl.lasso_objective(X, y, np.array([a, c]), y.mean(), 0.1) for a in grid for c in grid)
    assert bl.lasso_objective(X, y, m.w, m.b, 0.1) <= coarse + 1e-12


def test_lasso_objective_never_increases():
    X = standardized(50, 6, 3)
    y = X[:, 0] - X[:, 3] + np.random.default_rng(3).standard_normal(50)
    trace = []
    bl.train_lasso(X, y, 0.05, trace=trace)
    assert all(b <= a + 1e-12 for a, b in zip(trace, trace[1:]))


def test_lasso_requires_standardized_features():
    with pytest.raises(DataError):
        bl.train_lasso(np.arange(12.0).reshape(6, 2), np.arange(6.0), 0.1)


def test_soft_threshold():
    assert bl.soft_threshold(3.0, 1.0) == 2.0
    assert bl.soft_threshold(-3.0, 1.0) == -2.0
    assert bl.soft_threshold(0.5, 1.0) == 0.0


def test_grid_search_picks_a_grid_value():
    raw = np.random.default_rng(4).standard_normal((80, 5))
    y = raw[:, 1] * 2 + np.random.default_rng(5).standard_normal(80)
    std = bl.Standardizer.fit(raw[:60])
    X = np.vstack([std.transform(raw[:60]), std.transform(raw[60:])])
    model, lam = bl.lasso_grid_search(X[:60], y[:60], X[60:], y[60:], n_grid=5)
    top = bl.lambda_max(X[:60], y[:60])
    assert any(math.isclose(lam, g) for g in top * np.logspace(-3, -0.5, 5))
    assert model.w[1] > 0


# --- CNN regressor ------------------------------------------------------------


def regression_problem(n=120, seed=0):
    rows = synthetic.make_corpus(n, seed=seed, min_len=10, max_len=20)
    vocab = tp.build_vocab([tp.scrub_pii(r["text"]) for r in rows])
    vec = synthetic.make_embeddings(8, seed=seed)
    table = np.zeros((len(vocab), 8))
    for w, v in vec.items():
        if w in vocab:
            table[vocab.id(w)] = v
    docs = [tp.tokenize(tp.scrub_pii(r["text"]), vocab, None, r["id"], r["label"]) for r in rows]
    return table, docs


def test_zero_epochs_leave_parameters():
    table, docs = regression_problem(20)
    model = bl.CnnRegressor.init(CnnEncoderParams.init(8, (2,), 4, seed=0))
    before = [p.value.copy() for p in model.parameters()]
    bl.train_cnn_regressor(docs, docs[:5], table, model, bl.RegressorConfig(epochs=0))
    for p, b in zip(model.parameters(), before):
        np.testing.assert_array_equal(p.value, b)


def test_constant_labels_pull_bias_to_target():
    table, docs = regression_problem(20)
    for d in docs:
        d.label = 3.0
    model = bl.CnnRegressor.init(CnnEncoderParams.init(8, (2,), 4, seed=0))
    for f in model.encoder.filters:
        f.value = np.zeros_like(f.value)  # zero features: only the bias can move
    cfg = bl.RegressorConfig(batch_size=10, alpha=0.1, l2=0.0, dropout=0.0, epochs=100, seed=0)
    bl.train_cnn_regressor(docs, [], table, model, cfg, train_encoder=False)
    assert abs(float(model.b.value) - 3.0) < 0.05


def test_bias_gradient_is_twice_the_residual():
    b = nx.Parameter(np.array(1.25), "b", decay=False)
    c = np.full(7, 3.0)
    nx.forward_backward(lambda: nx.mean(nx.mul(nx.sub(b, c), nx.sub(b, c))), [b])
    assert float(b.grad) == pytest.approx(2 * (1.25 - 3.0), abs=1e-15)


def test_regressor_beats_constant_predictor():
    table, docs = regression_problem(300, seed=2)
    train, val, test = docs[:200], docs[200:250], docs[250:]
    model = bl.CnnRegressor.init(CnnEncoderParams.init(8, (1, 2), 16, seed=0))
    cfg = bl.RegressorConfig(batch_size=32, alpha=1e-2, l2=1e-4, dropout=0.0, epochs=40, patience=40, seed=0)
    bl.train_cnn_regressor(train, val, table, model, cfg)
    y = np.array([d.label for d in test])
    mse = np.mean((model.predict([d.token_ids for d in test], table) - y) ** 2)
    assert mse < y.var()
