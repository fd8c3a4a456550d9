import numpy as np
import pytest

from depannotate.parser import (
    Parse,
    dependency_path,
    parse,
    span_head,
    tag_token,
    tree_path,
)


def test_tagging_basics():
    assert tag_token("the") == "DET"
    assert tag_token("in") == "PREP"
    assert tag_token("and") == "CONJ"
    assert tag_token("was") == "AUX"
    assert tag_token("works") == "VERB"
    assert tag_token("settled") == "VERB"   # suffix rule
    assert tag_token("Anna") == "PROPN"
    assert tag_token("city") == "NOUN"
    assert tag_token(".") == "PUNCT"


def test_parse_single_root_tree():
    tree = parse(["Anna", "works", "at", "Acme"])
    assert tree.heads[tree.root] == tree.root
    assert sum(1 for i, h in enumerate(tree.heads) if h == i) == 1
    assert tree.root == 1  # the verb
    assert tree.heads[0] == 1   # subject -> verb
    assert tree.heads[2] == 1   # preposition -> verb
    assert tree.heads[3] == 2   # object of preposition


def test_parse_empty_error():
    with pytest.raises(ValueError):
        parse([])


def test_parse_no_verb_fallback():
    tree = parse(["the", "old", "city"])
    assert tree.heads[tree.root] == tree.root
    assert tree.root == 2


def test_parse_always_a_tree_on_random_inputs():
    rng = np.random.default_rng(0)
    pool = ["the", "Anna", "works", "in", "city", "and", "was", "settled",
            "Prague", ".", "reported", "of", "year", "Acme", "large"]
    for _ in range(200):
        tokens = [pool[int(i)] for i in rng.integers(0, len(pool), size=int(rng.integers(1, 12)))]
        tree = parse(tokens)
        roots = [i for i, h in enumerate(tree.heads) if h == i]
        assert roots == [tree.root]
        for i in range(len(tokens)):
            assert 0 <= tree.heads[i] < len(tokens)
            tree.depth(i)  # terminates: no cycles


def test_two_token_path_covers_both():
    # "A B" with A the head of B: the path between the two single-token
    # entities is both tokens
    assert dependency_path(["Anna", "Borun"], (0, 1), (1, 2)) == [0, 1]


def test_path_runs_through_the_verb():
    tokens = ["Anna", "works", "at", "Acme"]
    path = dependency_path(tokens, (0, 1), (3, 4))
    assert path == [0, 1, 2, 3]


def test_path_endpoints_always_included():
    rng = np.random.default_rng(3)
    pool = ["the", "Anna", "works", "in", "city", "Prague", "was", "old"]
    for _ in range(100):
        n = int(rng.integers(2, 10))
        tokens = [pool[int(i)] for i in rng.integers(0, len(pool), size=n)]
        i, j = sorted(rng.choice(n, size=2, replace=False))
        head, tail = (int(i), int(i) + 1), (int(j), int(j) + 1)
        path = dependency_path(tokens, head, tail)
        assert head[0] in path and tail[0] in path
        assert all(0 <= k < n for k in path)
        assert path == sorted(path)


def test_span_head_prefers_outside_pointing_token():
    # span [2,4) = "Acme Labs": Acme attaches to the preposition outside,
    # Labs attaches to... both resolve; head word must point outside
    tree = parse(["Anna", "works", "at", "Acme", "Labs"])
    head_word = span_head(tree, (3, 5))
    assert tree.heads[head_word] not in {3, 4}


def test_span_head_deterministic_tie():
    tree = Parse(("NOUN", "NOUN", "NOUN"), (2, 2, 2), 2)
    # both 0 and 1 point outside the span [0,2); equal depth -> leftmost
    assert span_head(tree, (0, 2)) == 0


def test_tree_path_same_node():
    tree = parse(["Anna", "works"])
    assert tree_path(tree, 0, 0) == [0]
