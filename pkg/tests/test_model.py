import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cslm.corpus import BOS_ID, EOS_ID, Lang
from cslm.model import (LstmState, ModelError, ModelParams, forward, forward_batch, init_params, log_prob_sequence,
                        lstm_step, make_partition, normalize_rows, pad_batch, partition_output, sentence_log_probs,
                        zero_state)

from conftest import make_vocab


def _sig(a):
    return 1.0 / (1.0 + math.exp(-a))


def scalar_lstm_step(w, b, x, h, c):
    """Loop-by-loop reference: w is (2z, 4z) over [x; h], gate blocks i, f, g, o."""
    z = len(h)
    inp = list(x) + list(h)
    pre = [b[j] + sum(inp[k] * w[k][j] for k in range(2 * z)) for j in range(4 * z)]
    h2, c2 = [], []
    for u in range(z):
        i, f = _sig(pre[u]), _sig(pre[z + u])
        g, o = math.tanh(pre[2 * z + u]), _sig(pre[3 * z + u])
        cu = f * c[u] + i * g
        c2.append(cu)
        h2.append(o * math.tanh(cu))
    return np.array(h2), np.array(c2)


def dense_oracle(params, ids):
    """Softmax(W h_t) via an explicit per-step loop and dense matrix products."""
    z = params.hidden
    h, c = np.zeros(z), np.zeros(z)
    out = []
    for t in ids:
        h, c = scalar_lstm_step(params.lstm_w.tolist(), params.lstm_b.tolist(), params.emb[t].tolist(),
                                h.tolist(), c.tolist())
        logits = np.array([sum(params.W[v, k] * h[k] for k in range(z)) for v in range(params.vocab_size)])
        e = np.exp(logits - logits.max())
        out.append(e / e.sum())
    return np.array(out)


# ---------------------------------------------------------------- init

def test_init_deterministic():
    a, b = init_params(10, 4, 3), init_params(10, 4, 3)
    for k in a.arrays():
        assert np.array_equal(a.arrays()[k], b.arrays()[k])


def test_init_shapes_and_range():
    p = init_params(10, 4, 0)
    assert p.W.shape == (10, 4) and p.emb.shape == (10, 4)
    assert p.lstm_w.shape == (8, 16) and p.lstm_b.shape == (16,)
    for a in (p.emb, p.W, p.lstm_w):
        assert np.all(np.abs(a) <= 0.08)


def test_forget_bias_is_one():
    p = init_params(10, 4, 0)
    assert np.all(p.lstm_b[4:8] == 1.0)
    assert np.all(p.lstm_b[:4] == 0.0) and np.all(p.lstm_b[8:] == 0.0)


def test_init_rejects_tiny():
    with pytest.raises(ModelError):
        init_params(2, 4, 0)


# ---------------------------------------------------------------- lstm step

def test_zero_weights_give_zero_h():
    p = init_params(5, 3, 0)
    p.lstm_w[:] = 0.0
    p.lstm_b[:] = 0.0
    s = lstm_step(p, np.ones(3), zero_state(3))
    assert np.all(s.h == 0.0)


def test_step_matches_scalar_oracle(rng):
    p = init_params(5, 2, 0)
    p.lstm_w = rng.normal(size=(4, 8))
    p.lstm_b = rng.normal(size=8)
    x, h, c = rng.normal(size=2), rng.normal(size=2), rng.normal(size=2)
    got = lstm_step(p, x, LstmState(h, c))
    h2, c2 = scalar_lstm_step(p.lstm_w.tolist(), p.lstm_b.tolist(), x, h, c)
    assert np.allclose(got.h, h2, atol=1e-14) and np.allclose(got.c, c2, atol=1e-14)


def test_saturated_forget_gate_keeps_cell(rng):
    z = 3
    p = init_params(5, z, 0)
    p.lstm_w[:] = 0.0
    p.lstm_b[:] = 0.0
    p.lstm_b[z:2 * z] = 50.0       # forget gate ~ 1
    p.lstm_b[:z] = -50.0           # input gate ~ 0
    c = rng.normal(size=z)
    s = lstm_step(p, rng.normal(size=z), LstmState(rng.normal(size=z), c))
    assert np.max(np.abs(s.c - c)) < 1e-6


def test_step_dimension_mismatch():
    p = init_params(5, 3, 0)
    with pytest.raises(ModelError):
        lstm_step(p, np.ones(4), zero_state(3))


def test_batched_step_matches_single(rng):
    p = init_params(6, 3, 1)
    X = rng.normal(size=(4, 3))
    batched = lstm_step(p, X, zero_state(3, 4))
    for b in range(4):
        single = lstm_step(p, X[b], zero_state(3))
        assert np.allclose(batched.h[b], single.h, atol=1e-15)


# ---------------------------------------------------------------- forward

def test_zero_W_is_uniform():
    p = init_params(7, 3, 0)
    p.W[:] = 0.0
    y = forward(p, [1, 3, 4])
    assert np.allclose(y, 1.0 / 7, atol=1e-15)


def test_forward_sums_to_one_and_is_deterministic():
    p = init_params(11, 5, 2)
    ids = [1, 4, 5, 9, 2]
    y1, y2 = forward(p, ids), forward(p, ids)
    assert np.array_equal(y1, y2)
    assert np.allclose(y1.sum(axis=1), 1.0, atol=1e-9)


def test_forward_matches_dense_oracle(rng):
    p = init_params(5, 3, 0)
    for a in p.arrays().values():
        a[...] = rng.normal(scale=0.7, size=a.shape)
    ids = [1, 3, 4, 0, 2]
    assert np.max(np.abs(forward(p, ids) - dense_oracle(p, ids))) < 1e-12


def test_forward_errors():
    p = init_params(5, 3, 0)
    with pytest.raises(ModelError):
        forward(p, [])
    with pytest.raises(ModelError):
        forward(p, [5])
    with pytest.raises(ModelError):
        forward(p, [1], dropout_rate=1.0)


def test_dropout_train_only():
    p = init_params(9, 4, 0)
    ids = [1, 3, 5, 7]
    ev = forward(p, ids, dropout_rate=0.5, mode="eval")
    tr = forward(p, ids, dropout_rate=0.5, mode="train", seed=3)
    assert np.array_equal(ev, forward(p, ids))
    assert not np.allclose(ev, tr)
    assert np.array_equal(tr, forward(p, ids, dropout_rate=0.5, mode="train", seed=3))
    assert np.allclose(tr.sum(axis=1), 1.0, atol=1e-9)


def test_inverted_dropout_scaling(rng):
    p = init_params(6, 200, 0)
    cache = forward_batch(p, np.array([[1]] * 50), dropout=0.3, rng=rng)
    kept = cache.drop[cache.drop > 0]
    assert np.allclose(kept, 1.0 / 0.7)
    assert abs(np.mean(cache.drop) - 1.0) < 0.02


# ---------------------------------------------------------------- log probs

def test_uniform_log_probs():
    p = init_params(8, 3, 0)
    p.W[:] = 0.0
    lp = log_prob_sequence(p, [3, 4, 5])
    assert lp.shape == (4,)
    assert np.allclose(lp, -math.log(8), atol=1e-15)


def test_log_prob_matches_forward_indexing():
    p = init_params(8, 3, 5)
    sent = [3, 7, 4]
    y = forward(p, [BOS_ID] + sent)
    expect = np.log(y[np.arange(4), sent + [EOS_ID]])
    assert np.allclose(log_prob_sequence(p, sent), expect, atol=1e-13)


def test_log_probs_normalised_over_candidates():
    p = init_params(8, 3, 5)
    y = forward(p, [BOS_ID, 3, 7])
    assert np.allclose(np.exp(np.log(y)).sum(axis=1), 1.0, atol=1e-9)


def test_batched_log_probs_match_single(rng):
    p = init_params(12, 4, 1)
    sents = [rng.integers(3, 12, size=n) for n in (1, 5, 3, 7, 2, 5)]
    batched = sentence_log_probs(p, sents, batch_size=4)
    for s, lp in zip(sents, batched):
        assert np.allclose(lp, log_prob_sequence(p, s), atol=1e-13)


def test_pad_batch_layout():
    inputs, targets, mask = pad_batch([np.array([5, 6]), np.array([7])])
    assert inputs[:, 0].tolist() == [BOS_ID, 5, 6]
    assert targets[:, 0].tolist() == [5, 6, EOS_ID]
    assert mask[:, 1].tolist() == [True, True, False]
    assert targets[:2, 1].tolist() == [7, EOS_ID]


# ---------------------------------------------------------------- normalization and partitions

def test_normalize_3_4_5():
    assert np.allclose(normalize_rows(np.array([[3.0, 4.0]])), [[0.6, 0.8]], atol=1e-15)


def test_normalize_idempotent(rng):
    W = rng.normal(size=(20, 5))
    once = normalize_rows(W)
    assert np.max(np.abs(normalize_rows(once) - once)) < 1e-12
    assert np.allclose(np.linalg.norm(once, axis=1), 1.0, atol=1e-12)
    # direction preserved
    cos = np.sum(once * W, axis=1) / np.linalg.norm(W, axis=1)
    assert np.allclose(cos, 1.0)


def test_normalize_selected_rows_only(rng):
    W = rng.normal(size=(6, 3))
    out = normalize_rows(W, np.array([1, 4]))
    assert np.array_equal(out[[0, 2, 3, 5]], W[[0, 2, 3, 5]])
    assert np.allclose(np.linalg.norm(out[[1, 4]], axis=1), 1.0)


def test_normalize_zero_row_raises():
    with pytest.raises(ModelError, match="zero norm"):
        normalize_rows(np.array([[1.0, 0.0], [0.0, 0.0]]))


def test_partition_counts():
    v = make_vocab(3, 2)
    assert len(v) == 8
    W = np.arange(16.0).reshape(8, 2)
    W1, W2, part = partition_output(W, v)
    assert len(W1) == 3 and len(W2) == 2
    allrows = np.sort(np.concatenate([part.l1, part.l2, part.special]))
    assert allrows.tolist() == list(range(8))
    assert np.array_equal(W1, W[part.l1]) and np.array_equal(W2, W[part.l2])
    assert np.all(v.tags[part.l1] == Lang.L1) and np.all(v.tags[part.special] == Lang.SPECIAL)


def test_partition_empty_language_raises():
    with pytest.raises(ModelError):
        make_partition(make_vocab(3, 0))


def test_scaled_rows_equal_probability_after_normalization(rng):
    p = init_params(9, 6, 0)
    p.W[5] = 2.5 * p.W[7]
    p.W = normalize_rows(p.W, np.arange(3, 9))
    for _ in range(100):
        h = rng.normal(scale=3.0, size=6)
        logits = p.W @ h
        y = np.exp(logits - logits.max())
        y /= y.sum()
        assert abs(y[5] - y[7]) < 1e-9


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_relabeling_equivariance(seed):
    rng = np.random.default_rng(seed)
    V, z = 8, 3
    p = init_params(V, z, seed)
    perm = np.arange(V)
    perm[3:] = 3 + rng.permutation(V - 3)      # keep specials in place
    q = ModelParams(np.empty_like(p.emb), p.lstm_w, p.lstm_b, np.empty_like(p.W))
    q.emb[perm] = p.emb
    q.W[perm] = p.W
    ids = rng.integers(0, V, size=5)
    yp = forward(p, ids)
    yq = forward(q, perm[ids])
    assert np.allclose(yq[:, perm], yp, atol=1e-14)
