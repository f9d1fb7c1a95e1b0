import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import ortho_group

from cslm.corpus import BOS_ID, EOS_ID, UNK_ID, BilingualDict, Corpus, Lang, SentClass, Vocabulary
from cslm.evaluate import (SELECTORS, EvalError, Projection2D, contains_switch, cs_points, generate, pca_project,
                           perplexity, perplexity_report, separability_score, translate_eval)
from cslm.model import PartitionView, init_params, log_prob_sequence

from conftest import make_vocab

L1, L2, SP = Lang.L1, Lang.L2, Lang.SPECIAL


# ---------------------------------------------------------------- cs points

@pytest.mark.parametrize("tags,expect", [
    ([L1, L1, L2, L1], [2, 3]),
    ([L1, L1, L1], []),
    ([L1, SP, L2], [2]),
    ([SP, L2, SP, SP, L2, L1], [5]),
    ([], []),
])
def test_cs_points(tags, expect):
    assert cs_points(tags) == expect


@settings(max_examples=60, deadline=None)
@given(st.lists(st.sampled_from([L1, L2, SP]), max_size=30))
def test_cs_points_brute_force(tags):
    words = [(t, tag) for t, tag in enumerate(tags) if tag != SP]
    expect = [words[k][0] for k in range(1, len(words)) if words[k][1] != words[k - 1][1]]
    assert cs_points(tags) == expect


def test_contains_switch():
    v = make_vocab(2, 2)
    x0, x1, y0 = v.id_of["x00"], v.id_of["x01"], v.id_of["y00"]
    assert contains_switch([x0, EOS_ID, y0], v)
    assert not contains_switch([x0, x1], v)


# ---------------------------------------------------------------- perplexity

@pytest.fixture
def mixed():
    v = make_vocab(3, 3)
    x0, x1, x2, y0, y1, y2 = (v.id_of[t] for t in ("x00", "x01", "x02", "y00", "y01", "y02"))
    c = Corpus.from_ids([[x0, x1, x2], [y0, y1], [x0, y0, x1, y2], [y1, y1, x2]], v)
    return v, c


def test_uniform_model_gives_v(mixed):
    v, c = mixed
    p = init_params(len(v), 3, 0)
    p.W[:] = 0.0
    rep = perplexity_report(p, c, v)
    for k in SELECTORS:
        assert abs(rep.ppl[k] - len(v)) < 1e-9


def test_counts_partition_overall(mixed):
    v, c = mixed
    rep = perplexity_report(init_params(len(v), 3, 0), c, v)
    assert rep.counts["OVERALL"] == rep.counts["ZH"] + rep.counts["EN"] + rep.counts["CS"] == c.n_tokens() + len(c)
    assert rep.counts["ZH"] == 4 and rep.counts["EN"] == 3
    assert rep.counts["CSP"] == 3 + 1       # [x y x y] -> 3 points, [y y x] -> 1


def test_report_matches_manual_sum(mixed):
    v, c = mixed
    p = init_params(len(v), 4, 3)
    lps = [log_prob_sequence(p, s) for s in c.sentences]
    cs = [i for i, lab in enumerate(c.labels) if lab == SentClass.CS]
    num = sum(lps[i][cs_points(v.tags[c.sentences[i]])].sum() for i in cs)
    den = sum(len(cs_points(v.tags[c.sentences[i]])) for i in cs)
    rep = perplexity_report(p, c, v)
    assert abs(rep.ppl["CSP"] - math.exp(-num / den)) < 1e-9
    allsum = sum(lp.sum() for lp in lps)
    assert abs(rep.ppl["OVERALL"] - math.exp(-allsum / sum(len(lp) for lp in lps))) < 1e-9


def test_overall_between_parts(mixed):
    v, c = mixed
    rep = perplexity_report(init_params(len(v), 4, 7), c, v)
    parts = [rep.ppl[k] for k in ("ZH", "EN", "CS")]
    assert min(parts) <= rep.ppl["OVERALL"] <= max(parts)


def test_order_invariance(mixed):
    v, c = mixed
    p = init_params(len(v), 4, 1)
    rev = Corpus(c.sentences[::-1], c.labels[::-1])
    a, b = perplexity_report(p, c, v), perplexity_report(p, rev, v)
    for k in SELECTORS:
        assert abs(a.ppl[k] - b.ppl[k]) < 1e-9


def test_absent_selector_is_none(mixed):
    v, c = mixed
    mono = c.subset(SentClass.MONO_L1)
    p = init_params(len(v), 3, 0)
    assert perplexity(p, mono, v, "CS") is None
    assert perplexity(p, mono, v, "CSP") is None
    assert perplexity(p, mono, v, "ZH") is not None


def test_unknown_selector(mixed):
    v, c = mixed
    with pytest.raises(EvalError):
        perplexity(init_params(len(v), 3, 0), c, v, "FR")


def test_vocab_mismatch(mixed):
    v, c = mixed
    with pytest.raises(EvalError):
        perplexity_report(init_params(len(v) + 1, 3, 0), c, v)


# ---------------------------------------------------------------- translation

def _vocab_with_freqs(n1, n2, freq):
    toks = ["<unk>", "<s>", "</s>"] + [f"x{i}" for i in range(n1)] + [f"y{i}" for i in range(n2)]
    tags = [SP] * 3 + [L1] * n1 + [L2] * n2
    return Vocabulary(toks, tags, [0, 0, 0] + list(freq))


def test_translation_perfect():
    v = _vocab_with_freqs(3, 3, [100] * 6)
    W = np.zeros((9, 3))
    W[3:6] = np.eye(3)
    W[6:9] = np.eye(3)
    rep = translate_eval(W, v, BilingualDict([(3, 6), (4, 7), (5, 8)]), 80)
    assert rep.mrr == 1.0 and rep.p_at_10 == 1.0 and rep.pairs == 3 and rep.freq_threshold == 80


def test_translation_ranks_one_and_two():
    v = _vocab_with_freqs(2, 2, [100] * 4)
    W = np.zeros((7, 2))
    W[3] = [1.0, 0.0]
    W[4] = [1.0, 1.0]
    W[5] = [1.0, 0.1]     # y0: nearest to x0 and to x1 (below x1's own target)
    W[6] = [1.0, 0.9]
    rep = translate_eval(W, v, BilingualDict([(3, 5), (4, 5)]), 0)
    assert rep.ranks == [1, 2]
    assert rep.mrr == 0.75


def test_translation_ties_go_to_lower_id():
    v = _vocab_with_freqs(1, 3, [100] * 4)
    W = np.zeros((7, 2))
    W[3] = [1.0, 0.0]
    W[4:7] = [1.0, 0.0]
    assert translate_eval(W, v, BilingualDict([(3, 6)]), 0).ranks == [3]
    assert translate_eval(W, v, BilingualDict([(3, 4)]), 0).ranks == [1]


def test_translation_many_to_many_best_rank():
    v = _vocab_with_freqs(1, 3, [100] * 4)
    W = np.zeros((7, 2))
    W[3] = [1.0, 0.0]
    W[4], W[5], W[6] = [0.0, 1.0], [1.0, 0.2], [1.0, 0.5]
    rep = translate_eval(W, v, BilingualDict([(3, 4), (3, 6)]), 0)
    assert rep.ranks == [2] and rep.pairs == 1


def test_translation_frequency_filter_and_error():
    v = _vocab_with_freqs(2, 2, [81, 80, 200, 200])
    W = np.random.default_rng(0).normal(size=(7, 3))
    rep = translate_eval(W, v, BilingualDict([(3, 5), (4, 6)]), 80)
    assert rep.pairs == 1                               # x1 has freq 80, not > 80
    with pytest.raises(EvalError, match="threshold"):
        translate_eval(W, v, BilingualDict([(4, 6)]), 80)


def test_translation_reverse_direction():
    v = _vocab_with_freqs(2, 2, [100] * 4)
    W = np.zeros((7, 2))
    W[3], W[4], W[5], W[6] = [1, 0], [0, 1], [0.9, 0.1], [0.2, 1]
    rep = translate_eval(W, v, BilingualDict([(3, 5), (4, 6)]), 0, "L2-L1")
    assert rep.direction == "L2-L1" and rep.mrr == 1.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_translation_ranges(seed):
    rng = np.random.default_rng(seed)
    v = _vocab_with_freqs(8, 8, rng.integers(0, 200, 16))
    W = rng.normal(size=(19, 3))
    pairs = [(3 + i, 11 + j) for i, j in zip(rng.integers(0, 8, 10), rng.integers(0, 8, 10))]
    try:
        rep = translate_eval(W, v, BilingualDict(pairs), 50)
    except EvalError:
        return
    assert 0 < rep.mrr <= 1 and 0 <= rep.p_at_10 <= 1
    assert rep.p_at_10 >= np.mean(np.array(rep.ranks) == 1)
    assert (rep.mrr == 1.0) == all(r == 1 for r in rep.ranks)


# ---------------------------------------------------------------- PCA and separability

def _part(n1, n2):
    return PartitionView(np.arange(3, 3 + n1), np.arange(3 + n1, 3 + n1 + n2), np.arange(3))


def test_pca_rank_one_line(rng):
    t = rng.normal(size=30)
    W = np.zeros((33, 3))
    W[3:] = np.outer(t, [1.0, 2.0, -0.5]) + 4.0
    proj = pca_project(W, _part(15, 15))
    assert abs(proj.explained_ratio[0] - 1.0) < 1e-9


def test_pca_variance_equals_eigenvalue_and_centering(rng):
    W = rng.normal(size=(43, 5)) * [3, 2, 1, 0.5, 0.1]
    proj = pca_project(W, _part(20, 20))
    assert np.allclose(proj.coords.mean(axis=0), 0.0, atol=1e-9)
    assert np.allclose(proj.coords.var(axis=0), proj.eigenvalues, atol=1e-9)
    assert proj.eigenvalues[0] >= proj.eigenvalues[1]


def test_pca_sign_convention(rng):
    W = rng.normal(size=(43, 4))
    a = pca_project(W, _part(20, 20))
    # -W has the same covariance, hence the same signed components, so its coordinates flip
    assert np.allclose(pca_project(-W, _part(20, 20)).coords, -a.coords, atol=1e-9)
    # the leading loading of each component is positive: recover loadings by least squares
    rows = W[3:] - W[3:].mean(axis=0)
    loadings = np.linalg.lstsq(rows, a.coords, rcond=None)[0]
    lead = np.argmax(np.abs(loadings), axis=0)
    assert np.all(loadings[lead, [0, 1]] > 0)


def test_pca_reconstruction_monotone(rng):
    W = rng.normal(size=(43, 5))
    rows = W[3:] - W[3:].mean(axis=0)
    errs = []
    for k in (1, 2, 3):
        proj = pca_project(W, _part(20, 20), k)
        basis = np.linalg.lstsq(proj.coords, rows, rcond=None)[0]
        errs.append(np.sum((rows - proj.coords @ basis) ** 2))
    assert errs[0] >= errs[1] >= errs[2]


def test_pca_rotation_keeps_explained_variance(rng):
    W = rng.normal(size=(43, 4))
    Q = ortho_group.rvs(4, random_state=1)
    a, b = pca_project(W, _part(20, 20)), pca_project(W @ Q, _part(20, 20))
    assert np.allclose(a.explained_ratio, b.explained_ratio, atol=1e-8)
    assert np.allclose(np.abs(a.coords), np.abs(b.coords), atol=1e-8)


def test_pca_degenerate():
    with pytest.raises(EvalError):
        pca_project(np.ones((10, 3)), _part(4, 3))


def _proj(c1, c2):
    coords = np.vstack([c1, c2])
    tags = np.array([L1] * len(c1) + [L2] * len(c2))
    return Projection2D(np.arange(len(coords)), tags, coords, np.ones(2), np.ones(2) / 2)


def test_separability_wide_margin(rng):
    assert separability_score(_proj(rng.normal(size=(50, 2)), rng.normal(size=(50, 2)) + [20, 0])) == 1.0


def test_separability_identical_distributions():
    scores = []
    for seed in range(20):
        r = np.random.default_rng(seed)
        scores.append(separability_score(_proj(r.normal(size=(100, 2)), r.normal(size=(100, 2)))))
    assert abs(np.mean(scores) - 0.5) < 0.1


def test_separability_label_symmetry(rng):
    a, b = rng.normal(size=(30, 2)), rng.normal(size=(40, 2)) + 0.7
    assert separability_score(_proj(a, b)) == separability_score(_proj(b, a))


def test_separability_needs_both_languages(rng):
    with pytest.raises(EvalError):
        separability_score(_proj(rng.normal(size=(5, 2)), np.zeros((0, 2))))


# ---------------------------------------------------------------- generation

def test_generate_max_len_zero():
    p = init_params(9, 3, 0)
    assert generate(p, [3, 4], 0) == [3, 4]


def test_generate_greedy_reproducible_and_clean():
    p = init_params(9, 3, 0)
    a = generate(p, [3], 15)
    assert a == generate(p, [3], 15)
    assert a[0] == 3 and BOS_ID not in a[1:] and UNK_ID not in a[1:] and EOS_ID not in a


def test_generate_sampling_seeded():
    p = init_params(9, 3, 0)
    a = generate(p, [3], 20, "sample", 1.5, seed=4)
    assert a == generate(p, [3], 20, "sample", 1.5, seed=4)
    assert all(0 <= t < 9 for t in a)


def test_generate_stops_at_eos():
    p = init_params(9, 3, 0)
    p.W[:] = 0.0
    p.W[EOS_ID] = 100.0 * np.sign(np.ones(3))
    p.lstm_w[:] = 0.0
    p.lstm_b[:] = 5.0        # h > 0 in every unit, so eos dominates
    assert generate(p, [3, 4], 10) == [3, 4]


def test_generate_errors():
    p = init_params(9, 3, 0)
    with pytest.raises(EvalError):
        generate(p, [], 5)
    with pytest.raises(EvalError):
        generate(p, [3], 5, "beam")
    with pytest.raises(EvalError):
        generate(p, [3], 5, "sample", 0.0)
