import numpy as np
import pytest

from opensetre.attribution import (
    AttributionError,
    attribution_scores,
    candidate_positions,
    counterfactual_contribution,
    dp_scores,
    importance_scores,
    normalize_attribution,
    select_key_tokens,
    token_importance,
)
from opensetre.corpus import (
    RelationInstance,
    Vocabulary,
    build_vocab,
    compute_tfidf,
)
from opensetre.encoder import EncoderConfig, EncoderParams, grad_embeddings, mark_instance
from gradcheck import random_instance, random_setup


def linear_params(vocab, d_e=3, seed=0, n_rel=1):
    config = EncoderConfig(d_e=d_e, depth=0, readout="sum", use_positions=False,
                           max_len=40)
    return EncoderParams.init(len(vocab), n_rel, config, seed)


def inst(tokens, head=(0, 1), tail=None, relation="r", dep_path=None):
    if tail is None:
        tail = (len(tokens) - 1, len(tokens))
    return RelationInstance(tuple(tokens), head, tail, relation,
                            None if dep_path is None else frozenset(dep_path))


# ---------------------------------------------------------- counterfactual

def test_counterfactual_linear_oracle_exact():
    # depth 0 / sum readout / positions off / n = 1: deleting token i changes
    # the score by exactly (folded classifier row) . embedding(token i).
    vocab = Vocabulary(["a", "b", "c", "d", "e"])
    params = linear_params(vocab, d_e=4, seed=3)
    instance = inst(["a", "b", "c", "d"], head=(0, 1), tail=(3, 4))
    row = params.w_cls[0, :4] + params.w_cls[0, 4:]
    for i in (1, 2):
        expected = float(row @ params.emb[vocab.id(instance.tokens[i])])
        got = counterfactual_contribution(params, instance, vocab, i)
        assert got == pytest.approx(expected, abs=1e-10)


def test_counterfactual_duplicate_tokens_symmetric():
    vocab = Vocabulary(["a", "b"])
    params = linear_params(vocab, seed=7)
    instance = inst(["b", "a", "a", "b"], head=(0, 1), tail=(3, 4))
    c1 = counterfactual_contribution(params, instance, vocab, 1)
    c2 = counterfactual_contribution(params, instance, vocab, 2)
    assert c1 == pytest.approx(c2, abs=1e-12)


def test_counterfactual_zero_embedding_zero_contribution():
    vocab = Vocabulary(["a", "z"])
    params = linear_params(vocab, seed=1)
    params.emb[vocab.id("z")] = 0.0
    instance = inst(["a", "z", "a"], head=(0, 1), tail=(2, 3))
    assert counterfactual_contribution(params, instance, vocab, 1) == pytest.approx(0.0, abs=1e-12)


def test_counterfactual_deleting_span_token_error():
    # the smallest valid instance is two single-token spans; deleting either
    # token would empty a span
    vocab = Vocabulary(["a", "b"])
    params = linear_params(vocab)
    instance = RelationInstance(("a", "b"), (0, 1), (1, 2), "r")
    with pytest.raises(AttributionError):
        counterfactual_contribution(params, instance, vocab, 0)


# ------------------------------------------------------------- attribution

def test_normalize_attribution_example():
    a = normalize_attribution(np.array([3.0, -1.0]))
    assert np.allclose(a, [0.75, 0.25])


def test_normalize_attribution_singleton():
    assert np.allclose(normalize_attribution(np.array([2.7])), [1.0])
    assert np.allclose(normalize_attribution(np.array([0.0])), [1.0])


def test_attribution_sums_to_one():
    rng = np.random.default_rng(11)
    for _ in range(10):
        vocab, params = random_setup(rng)
        instance = random_instance(rng, vocab)
        a = attribution_scores(params, instance, vocab)
        assert a.sum() == pytest.approx(1.0, abs=1e-12)


def test_attribution_scale_invariant():
    raw = np.array([0.2, -1.4, 3.3, 0.0])
    assert np.allclose(normalize_attribution(raw), normalize_attribution(17.5 * raw))


def test_attribution_zero_gradients_uniform():
    vocab = Vocabulary(["a", "b"])
    params = linear_params(vocab, seed=2)
    params.emb[:] = 0.0  # every dot product vanishes
    instance = inst(["a", "b", "a"], head=(0, 1), tail=(2, 3))
    a = attribution_scores(params, instance, vocab)
    assert np.allclose(a, 1.0 / 3.0)


def test_attribution_matches_first_order_term_linear():
    # scale-free check that a uses |grad . embedding| of the word embedding
    vocab = Vocabulary(["a", "b", "c"])
    params = linear_params(vocab, d_e=2, seed=5)
    instance = inst(["a", "b", "c"], head=(0, 1), tail=(2, 3))
    marked = mark_instance(instance, vocab)
    grads = grad_embeddings(params, marked)
    raw = np.array([
        abs(float(grads[marked.orig_to_marked[i]] @ params.emb[vocab.id(t)]))
        for i, t in enumerate(instance.tokens)
    ])
    assert np.allclose(attribution_scores(params, instance, vocab), raw / raw.sum())


# -------------------------------------------------------------- dependency

def test_dp_no_annotation_all_ones():
    assert np.allclose(dp_scores(inst(["a", "b", "c"])), 1.0)


def test_dp_empty_annotation_all_ones():
    instance = inst(["a", "b", "c"], dep_path=[])
    assert np.allclose(dp_scores(instance), 1.0)


def test_dp_ratio():
    tokens = ["t%d" % i for i in range(10)]
    instance = inst(tokens, head=(0, 1), tail=(9, 10), dep_path=[0, 2, 4, 6, 9])
    dp = dp_scores(instance)
    assert dp[2] == pytest.approx(2.0)
    assert dp[3] == pytest.approx(1.0)


def test_dp_values_ge_one_and_equal_on_path():
    instance = inst(["a"] * 8, head=(0, 1), tail=(7, 8), dep_path=[1, 5])
    dp = dp_scores(instance)
    assert np.all(dp >= 1.0)
    assert dp[1] == dp[5] == pytest.approx(4.0)


# -------------------------------------------------------------- importance

def test_importance_annihilation_and_product():
    a = np.array([0.5, 0.0])
    t = np.array([2.0, 3.0])
    dp = np.array([2.0, 5.0])
    imp = importance_scores(a, t, dp)
    assert imp[0] == pytest.approx(2.0)
    assert imp[1] == 0.0


def test_importance_length_mismatch():
    with pytest.raises(AttributionError):
        importance_scores(np.ones(2), np.ones(3), np.ones(2))


def test_importance_ablation_switches():
    train = [
        inst(["spark", "glue"], head=(0, 1), tail=(1, 2), relation="A"),
        inst(["ember", "glue"], head=(0, 1), tail=(1, 2), relation="B"),
    ]
    vocab = build_vocab(train)
    table = compute_tfidf(train, vocab)
    params = linear_params(vocab, seed=9, n_rel=2)
    instance = inst(["spark", "glue", "ember"], head=(0, 1), tail=(2, 3),
                    relation="A", dep_path=[1])

    full = token_importance(params, instance, vocab, table)
    expected = full.attribution * full.tfidf * full.dependency
    assert np.allclose(full.importance, expected)

    no_tfidf = token_importance(params, instance, vocab, table, use_tfidf=False)
    assert np.allclose(no_tfidf.importance, full.attribution * full.dependency)

    no_attr = token_importance(params, instance, vocab, table, use_attribution=False)
    assert np.allclose(no_attr.importance, full.tfidf * full.dependency)

    no_dp = token_importance(params, instance, vocab, table, use_dp=False)
    assert np.allclose(no_dp.importance, full.attribution * full.tfidf)


# --------------------------------------------------------------- selection

def test_select_top_two_of_ten():
    imp = np.array([0.1, 0.9, 0.2, 0.8, 0.3, 0.7, 0.4, 0.6, 0.5, 0.05])
    chosen = select_key_tokens(imp, 0.2, tuple(range(10)))
    assert chosen == (1, 3)


def test_select_floor_to_one():
    imp = np.array([0.3, 0.2, 0.1])
    assert select_key_tokens(imp, 0.01, (0, 1, 2)) == (0,)


def test_select_saturation():
    imp = np.array([0.3, 0.2, 0.1])
    assert set(select_key_tokens(imp, 1.0, (0, 1, 2))) == {0, 1, 2}


def test_select_ties_prefer_lower_position():
    imp = np.array([0.5, 0.5, 0.5, 0.5])
    assert select_key_tokens(imp, 0.5, (0, 1, 2, 3)) == (0, 1)


def test_select_empty_candidates_error():
    with pytest.raises(AttributionError):
        select_key_tokens(np.array([1.0]), 0.5, ())


def test_select_never_touches_spans():
    rng = np.random.default_rng(23)
    for _ in range(20):
        vocab, params = random_setup(rng)
        instance = random_instance(rng, vocab, min_tokens=3)
        cands = candidate_positions(instance)
        if not cands:
            continue
        imp = rng.random(len(instance.tokens))
        chosen = select_key_tokens(imp, 0.5, cands)
        assert not set(chosen) & set(instance.span_positions())


def test_candidates_exclude_spans():
    instance = inst(["a", "b", "c", "d"], head=(1, 2), tail=(3, 4))
    assert candidate_positions(instance) == (0, 2)
